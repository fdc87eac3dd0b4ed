#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "cfdepth/data/dataset.hpp"
#include "cfdepth/data/image_io.hpp"
#include "cfdepth/errors.hpp"
#include "cfdepth/fileio.hpp"
#include "cfdepth/train/checkpoint.hpp"
#include "cli.hpp"

using namespace cfdepth;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("cfdepth-cli-" + std::to_string(::getpid()) + "-" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Outcome run(std::vector<std::string> args) {
    args.insert(args.begin(), "cfdepth");
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
  }

  fs::path write_config(const std::string& name, const std::string& text) {
    const fs::path p = dir_ / name;
    std::ofstream(p) << text;
    return p;
  }

  fs::path gen(const std::string& name, const std::string& mode, int count, int seed) {
    const auto cfg = write_config(name + ".cfg", "gen.mode = " + mode + "\ngen.count = " + std::to_string(count) +
                                                     "\ngen.seed = " + std::to_string(seed) + "\noutput.dir = " + name + "\n");
    EXPECT_EQ(run({"gen-data", "--config", cfg.string()}).code, 0);
    return dir_ / name;
  }

  fs::path train_config(int iterations, int checkpoint_every, const std::string& out = "run") {
    gen("dep", "depth", 4, 1);
    gen("sem", "semantic", 4, 2);
    return write_config("run.cfg", "network.preset = tiny\ntrain.iterations = " + std::to_string(iterations) +
                                       "\ntrain.checkpoint_every = " + std::to_string(checkpoint_every) +
                                       "\ntrain.depth_batch = 2\ntrain.semantic_batch = 2\ntrain.l0 = false\n"
                                       "data.depth = dep\ndata.semantic = sem\ndata.test = dep\noutput.dir = " +
                                       out + "\n");
  }

  fs::path dir_;
};

std::vector<fs::path> files_under(const fs::path& root) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root));
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_F(Cli, GenDataRerunIsByteIdentical) {
  const auto a = gen("a", "full", 3, 9);
  const auto b = gen("b", "full", 3, 9);
  const auto fa = files_under(a), fb = files_under(b);
  ASSERT_EQ(fa, fb);
  ASSERT_EQ(fa.size(), 10u);
  for (const auto& f : fa) EXPECT_EQ(read_file(a / f), read_file(b / f)) << f;
}

TEST_F(Cli, GenDataDepthOnlyHasNoLabels) {
  const auto d = gen("d", "depth", 2, 1);
  EXPECT_FALSE(fs::exists(d / "labels"));
  EXPECT_TRUE(fs::exists(d / "depth"));
}

TEST_F(Cli, GenDataManifestRowCount) {
  const auto d = gen("d", "semantic", 100, 4);
  std::istringstream in(read_text_file(d / "manifest.tsv"));
  std::string line;
  std::size_t rows = 0;
  std::getline(in, line);
  while (std::getline(in, line)) rows += !line.empty();
  EXPECT_EQ(rows, 100u);
  EXPECT_EQ(load_dataset_dir(d).size(), 100u);
}

TEST_F(Cli, GenDataRefusesNonEmptyDirWithoutForce) {
  gen("d", "depth", 2, 1);
  const auto cfg = dir_ / "d.cfg";
  EXPECT_EQ(run({"gen-data", "--config", cfg.string()}).code, cli::kUsage);
  EXPECT_EQ(run({"gen-data", "--config", cfg.string(), "--force"}).code, cli::kOk);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run({}).code, cli::kUsage);
  EXPECT_EQ(run({"bogus"}).code, cli::kUsage);
  EXPECT_EQ(run({"--help"}).code, cli::kOk);
  EXPECT_EQ(run({"gen-data"}).code, cli::kUsage);
  const auto bad_key = write_config("bad.cfg", "train.alpah = 0.1\n");
  const auto r = run({"gen-data", "--config", bad_key.string()});
  EXPECT_EQ(r.code, cli::kConfig);
  EXPECT_NE(r.err.find("train.alpah"), std::string::npos);
  const auto bad_value = write_config("bad2.cfg", "network.depth_classes = many\n");
  EXPECT_EQ(run({"gen-data", "--config", bad_value.string()}).code, cli::kConfig);
  EXPECT_EQ(run({"gen-data", "--config", (dir_ / "missing.cfg").string()}).code, cli::kConfig);
  const auto no_data = write_config("nodata.cfg", "data.depth = nowhere\ndata.semantic = nowhere\n");
  EXPECT_EQ(run({"train", "--config", no_data.string()}).code, cli::kData);
  EXPECT_EQ(run({"inspect", "--ckpt", (dir_ / "missing.ckpt").string()}).code, cli::kData);
}

TEST_F(Cli, DivergenceIsNumericExit) {
  const auto cfg = train_config(40, 100);
  std::ofstream(cfg, std::ios::app) << "train.alpha = 1e30\ntrain.weight_decay = 0\n";
  EXPECT_EQ(run({"train", "--config", cfg.string()}).code, cli::kNumeric);
}

TEST_F(Cli, PhaseTwoNeedsInitFrom) {
  const auto cfg = train_config(2, 100);
  const auto r = run({"train", "--config", cfg.string(), "--phase", "2"});
  EXPECT_EQ(r.code, cli::kUsage);
  EXPECT_NE(r.err.find("--init-from"), std::string::npos);
  EXPECT_EQ(run({"train", "--config", cfg.string(), "--phase", "3"}).code, cli::kUsage);
}

TEST_F(Cli, ResumeContinuesStepNumbering) {
  const auto cfg = train_config(6, 3);
  ASSERT_EQ(run({"train", "--config", cfg.string()}).code, 0);
  const auto full_log = read_text_file(dir_ / "run/loss_phase1.csv");
  const auto full_ckpt = read_file(dir_ / "run/phase1.ckpt");
  const auto mid = dir_ / "run/phase1-step000003.ckpt";
  ASSERT_TRUE(fs::exists(mid));
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--resume", mid.string()}).code, 0);
  EXPECT_EQ(read_text_file(dir_ / "run/loss_phase1.csv"), full_log);
  EXPECT_EQ(read_file(dir_ / "run/phase1.ckpt"), full_ckpt);
  EXPECT_EQ(std::count(full_log.begin(), full_log.end(), '\n'), 7);
  EXPECT_EQ(run({"train", "--config", cfg.string()}).code, cli::kUsage);
}

TEST_F(Cli, EchoedConfigReproducesRun) {
  const auto cfg = train_config(4, 100);
  ASSERT_EQ(run({"train", "--config", cfg.string()}).code, 0);
  std::string echo = read_text_file(dir_ / "run/config.txt");
  const auto pos = echo.find("output.dir = ");
  echo.replace(pos, echo.find('\n', pos) - pos, "output.dir = " + (dir_ / "again").string());
  const auto cfg2 = write_config("again.cfg", echo);
  ASSERT_EQ(run({"train", "--config", cfg2.string()}).code, 0);
  EXPECT_EQ(read_text_file(dir_ / "again/loss_phase1.csv"), read_text_file(dir_ / "run/loss_phase1.csv"));
  const auto a = load_checkpoint(dir_ / "run/phase1.ckpt"), b = load_checkpoint(dir_ / "again/phase1.ckpt");
  ASSERT_EQ(a.tensors.size(), b.tensors.size());
  for (std::size_t i = 0; i < a.tensors.size(); ++i) EXPECT_TRUE(a.tensors[i].value == b.tensors[i].value);
}

TEST_F(Cli, TwoPhasesThenEvalAndPredict) {
  const auto cfg = train_config(2, 100);
  ASSERT_EQ(run({"train", "--config", cfg.string()}).code, 0);
  const auto p1 = dir_ / "run/phase1.ckpt";
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--phase", "2", "--init-from", p1.string()}).code, 0);
  const auto p2 = dir_ / "run/phase2.ckpt";
  EXPECT_EQ(load_checkpoint(p2).phase, 2u);
  EXPECT_EQ(run({"train", "--config", cfg.string(), "--phase", "2", "--init-from", p2.string(), "--force"}).code,
            cli::kData);

  const auto e = run({"eval", "--config", cfg.string(), "--ckpt", p2.string(), "--cap", "50", "--threads", "3"});
  ASSERT_EQ(e.code, 0) << e.err;
  const auto metrics = read_metrics_csv(dir_ / "run/metrics.csv");
  ASSERT_EQ(metrics.size(), 1u);
  EXPECT_EQ(metrics[0].cap, 50);
  EXPECT_EQ(read_metrics_csv(dir_ / "run/metrics_per_image.csv").size(), 4u);
  EXPECT_EQ(run({"eval", "--config", cfg.string(), "--ckpt", p2.string(), "--cap", "60"}).code, cli::kUsage);

  const auto samples = load_dataset_dir(dir_ / "dep");
  const auto image = dir_ / "dep/images" / (samples[0].id + ".ppm");
  ASSERT_EQ(run({"predict", "--config", cfg.string(), "--ckpt", p2.string(), image.string()}).code, 0);
  const Tensor written = read_pfm(dir_ / "run" / (samples[0].id + ".depth.pfm"));
  const Checkpoint ck = load_checkpoint(p2);
  const Network net = network_from_checkpoint(preset_config("tiny"), ck);
  const std::size_t h = samples[0].height(), w = samples[0].width();
  const Tensor direct = predict_depth(net, read_ppm(image).reshaped({1, 3, h, w})).reshaped({1, h, w});
  EXPECT_TRUE(written == direct);
  const Tensor color = read_ppm(dir_ / "run" / (samples[0].id + ".depth.ppm"));
  EXPECT_EQ(color.shape(), (Shape{3, h, w}));
}

TEST_F(Cli, PerfectPredictionsGiveZeroErrors) {
  const auto d = gen("d", "depth", 3, 5);
  const auto samples = load_dataset_dir(d);
  const auto res = evaluate([](const Sample& s) { return *s.depth; }, samples, 80, 2);
  write_metrics_csv(dir_ / "m.csv", {res.pooled});
  const auto m = read_metrics_csv(dir_ / "m.csv").at(0);
  EXPECT_EQ(m.rel, 0);
  EXPECT_EQ(m.sq_rel, 0);
  EXPECT_EQ(m.rms, 0);
  EXPECT_EQ(m.rms_log, 0);
  EXPECT_EQ(m.log10, 0);
  EXPECT_EQ(m.d1, 1);
  EXPECT_EQ(m.d3, 1);
}

TEST_F(Cli, InspectPaperScaleCensus) {
  NetworkConfig nc = preset_config("paper-scale");
  nc.scale = 1.0 / 32;
  nc.height = 128;
  nc.width = 128;
  KeyValueConfig kv;
  write_network_config(nc, kv);
  for (const Phase phase : {Phase::One, Phase::Two}) {
    const Network net = build_network(nc, phase, 1);
    Checkpoint ck;
    ck.phase = static_cast<std::uint32_t>(phase);
    ck.config = kv.str();
    ck.tensors = net.state();
    const auto path = dir_ / ("p" + std::to_string(ck.phase) + ".ckpt");
    save_checkpoint(ck, path);
    const auto r = run({"inspect", "--ckpt", path.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find(phase == Phase::One ? "ConvBlk: 9, DeconvBlk: 11" : "ConvBlk: 9, DeconvBlk: 7"),
              std::string::npos)
        << r.out;
    EXPECT_NE(r.out.find("paper-scale block census ok"), std::string::npos);
  }
}

TEST(Colormap, EndpointsAndClamping) {
  Tensor d(Shape{1, 1, 4}, std::vector<Real>{0.5f, 1.0f, 80.0f, 200.0f});
  const Tensor c = cli::colorize_depth(d);
  for (int ch = 0; ch < 3; ++ch) {
    EXPECT_EQ(c[ch * 4 + 0], c[ch * 4 + 1]);
    EXPECT_EQ(c[ch * 4 + 2], c[ch * 4 + 3]);
  }
  EXPECT_GT(c[0 * 4 + 1], c[2 * 4 + 1]);  // near is red-ish
  EXPECT_GT(c[2 * 4 + 2], c[0 * 4 + 2]);  // far is blue-ish
}
