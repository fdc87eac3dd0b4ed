#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <sstream>

#include "cfdepth/data/dataset.hpp"
#include "cfdepth/data/image_io.hpp"
#include "cfdepth/errors.hpp"
#include "cfdepth/fileio.hpp"
#include "cfdepth/train/checkpoint.hpp"

namespace cfdepth::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

const std::set<std::string> kOwnKeys = {
    "train.depth_only", "gen.seed",  "gen.count",   "gen.mode",          "gen.height",  "gen.width",
    "gen.classes",      "gen.texture", "data.depth", "data.semantic",    "data.test",   "output.dir",
    "eval.cap",         "eval.aggregation"};

std::size_t read_size(const KeyValueConfig& kv, const std::string& key, std::size_t fallback, std::size_t min = 0) {
  const auto v = kv.get(key);
  if (!v) return fallback;
  const long long n = parse_int(key, *v);
  if (n < static_cast<long long>(min)) throw ConfigError(key + " must be >= " + std::to_string(min));
  return static_cast<std::size_t>(n);
}

fs::path read_path(const KeyValueConfig& kv, const std::string& key, const fs::path& base, fs::path fallback = {}) {
  const auto v = kv.get(key);
  if (!v) return fallback;
  if (v->empty()) throw ConfigError(key + " is empty");
  fs::path p(*v);
  if (p.is_relative() && !base.empty()) p = base / p;
  return p.lexically_normal();
}

const char* gen_mode_name(GenMode m) {
  switch (m) {
    case GenMode::DepthOnly: return "depth";
    case GenMode::SemanticOnly: return "semantic";
    case GenMode::Full: return "full";
  }
  return "?";
}

GenMode parse_gen_mode(const std::string& v) {
  if (v == "depth") return GenMode::DepthOnly;
  if (v == "semantic") return GenMode::SemanticOnly;
  if (v == "full") return GenMode::Full;
  throw ConfigError("gen.mode must be depth, semantic or full, got '" + v + "'");
}

std::string absolute_str(const fs::path& p) { return fs::absolute(p).lexically_normal().string(); }

fs::path require_dir(const fs::path& p, const char* key) {
  if (p.empty()) throw ConfigError(std::string(key) + " is not set");
  return p;
}

NetworkConfig network_of(const Checkpoint& ckpt, const RunConfig& rc) {
  if (ckpt.config.empty()) return rc.network;
  return read_network_config(KeyValueConfig::parse(ckpt.config, "checkpoint config"));
}

Tensor predict_one(const Network& net, const Sample& raw, const TrainConfig& tc) {
  const Sample s = preprocess(raw, tc);
  const std::size_t h = s.height(), w = s.width();
  return predict_depth(net, s.rgb.reshaped({1, 3, h, w})).reshaped({1, h, w});
}

void write_loss_csv(const fs::path& path, const std::string& prefix, const std::vector<StepRecord>& log) {
  std::string text = loss_csv_header() + prefix;
  for (const auto& r : log) text += loss_csv_row(r);
  write_file_atomic(path, text);
}

/// Rows of an earlier loss.csv up to and including `step`.
std::string loss_rows_until(const fs::path& path, std::uint64_t step) {
  if (!fs::exists(path)) return {};
  std::istringstream in(read_text_file(path));
  std::string line, kept;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (std::stoull(line.substr(0, line.find(','))) > step) break;
    kept += line + "\n";
  }
  return kept;
}

void add_config_option(CLI::App* cmd, std::string& path, bool required) {
  auto* opt = cmd->add_option("--config", path, "key = value run configuration");
  if (required) opt->required();
}

// --- commands ----------------------------------------------------------------

int cmd_gen_data(const RunConfig& rc, bool force, std::ostream& out) {
  const fs::path dir = rc.output_dir;
  if (fs::exists(dir) && !fs::is_directory(dir)) throw DataError(dir.string() + " exists and is not a directory");
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) throw UsageError(dir.string() + " is not empty; pass --force to overwrite");
    const DatasetLayout layout;
    fs::remove(dir / layout.manifest);
    for (const auto& sub : {layout.images_dir, layout.depth_dir, layout.labels_dir}) fs::remove_all(dir / sub);
  }
  const auto samples = generate_dataset(rc.gen, rc.gen_count, rc.gen_mode);
  save_dataset(dir, samples);
  out << "wrote " << samples.size() << " " << gen_mode_name(rc.gen_mode) << " samples to " << dir.string() << "\n";
  return kOk;
}

struct TrainFlags {
  int phase = 1;
  std::string init_from, resume;
  bool force = false;
};

int cmd_train(const RunConfig& rc, const TrainFlags& f, std::ostream& out) {
  if (f.phase != 1 && f.phase != 2) throw UsageError("--phase must be 1 or 2");
  if (f.phase == 2 && f.init_from.empty() && f.resume.empty())
    throw UsageError("phase 2 needs --init-from <phase-1 checkpoint>");
  if (f.phase == 1 && !f.init_from.empty()) throw UsageError("--init-from only applies to phase 2");

  const fs::path dir = rc.output_dir;
  const fs::path loss_path = dir / ("loss_phase" + std::to_string(f.phase) + ".csv");
  const fs::path final_path = dir / ("phase" + std::to_string(f.phase) + ".ckpt");
  if (f.resume.empty() && !f.force && (fs::exists(loss_path) || fs::exists(final_path)))
    throw UsageError(dir.string() + " already holds a phase-" + std::to_string(f.phase) +
                     " run; pass --resume or --force");

  const auto depth = load_dataset_dir(require_dir(rc.depth_dir, "data.depth"));
  std::vector<Sample> semantic;
  if (f.phase == 1 && !rc.depth_only) semantic = load_dataset_dir(require_dir(rc.semantic_dir, "data.semantic"));

  std::optional<Checkpoint> resume, init;
  if (!f.resume.empty()) resume = load_checkpoint(f.resume);
  if (!f.init_from.empty()) init = load_checkpoint(f.init_from);
  if (init && init->phase != 1) throw CheckpointError(f.init_from + " is not a phase-1 checkpoint");

  fs::create_directories(dir);
  const std::string echo = effective_config(rc).str();
  write_file_atomic(dir / "config.txt", echo);

  const std::string prefix = resume ? loss_rows_until(loss_path, resume->iteration) : std::string();
  std::vector<StepRecord> log;
  TrainOptions opt;
  opt.config_echo = echo;
  opt.depth_only = rc.depth_only;
  if (resume) opt.resume = &*resume;
  opt.hooks.on_step = [&](const StepRecord& r) {
    log.push_back(r);
    return true;
  };
  opt.hooks.on_checkpoint = [&](const Checkpoint& c, bool final) {
    char name[64];
    std::snprintf(name, sizeof name, "phase%d-step%06llu.ckpt", f.phase, static_cast<unsigned long long>(c.iteration));
    const fs::path path = final ? final_path : dir / name;
    save_checkpoint(c, path);
    write_loss_csv(loss_path, prefix, log);
    out << "step " << c.iteration << ": wrote " << path.string() << "\n";
  };

  const TrainResult res = f.phase == 1 ? train_phase1(rc.network, rc.train, depth, semantic, opt)
                                       : train_phase2(rc.network, rc.train, depth, init ? *init : Checkpoint{}, opt);
  if (!res.log.empty()) out << "final loss " << format_double(res.log.back().loss) << "\n";
  return kOk;
}

int cmd_eval(const RunConfig& rc, const std::string& ckpt_path, unsigned threads, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const Network net = network_from_checkpoint(network_of(ckpt, rc), ckpt);
  std::vector<Sample> samples;
  for (auto& s : load_dataset_dir(require_dir(rc.test_dir, "data.test")))
    if (s.depth) samples.push_back(std::move(s));
  if (samples.empty()) throw DataError(rc.test_dir.string() + " has no samples with depth ground truth");

  const auto res = evaluate([&](const Sample& s) { return predict_one(net, s, rc.train); }, samples, rc.cap, threads);
  const MetricsReport summary =
      rc.aggregation == Aggregation::PixelPooled ? res.pooled : aggregate(res.per_image, Aggregation::PerImage);
  fs::create_directories(rc.output_dir);
  write_metrics_csv(rc.output_dir / "metrics.csv", {summary});
  write_metrics_csv(rc.output_dir / "metrics_per_image.csv", res.per_image);
  write_file_atomic(rc.output_dir / "eval_config.txt", effective_config(rc).str());
  out << metrics_csv({summary});
  return kOk;
}

int cmd_predict(const RunConfig& rc, const std::string& ckpt_path, const fs::path& image, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const NetworkConfig nc = network_of(ckpt, rc);
  const Network net = network_from_checkpoint(nc, ckpt);
  Sample s;
  s.id = image.stem().string();
  s.rgb = read_ppm(image);
  const Tensor depth = predict_one(net, s, rc.train);
  fs::create_directories(rc.output_dir);
  const fs::path pfm = rc.output_dir / (s.id + ".depth.pfm");
  const fs::path ppm = rc.output_dir / (s.id + ".depth.ppm");
  write_pfm(pfm, depth);
  write_ppm(ppm, colorize_depth(depth, nc.depth_min, nc.depth_max));
  out << "wrote " << pfm.string() << " and " << ppm.string() << "\n";
  return kOk;
}

int cmd_inspect(const std::string& ckpt_path, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  if (ckpt.config.empty()) throw CheckpointError(ckpt_path + " carries no network configuration");
  const NetworkConfig nc = read_network_config(KeyValueConfig::parse(ckpt.config, "checkpoint config"));
  const Network net = network_from_checkpoint(nc, ckpt);
  out << "checkpoint: " << ckpt_path << "\n";
  out << "format version " << ckpt.version << ", phase " << ckpt.phase << ", step " << ckpt.iteration << "\n";
  out << "preset: " << nc.preset << ", input " << nc.height << "x" << nc.width << "\n";

  std::map<Branch, std::pair<std::size_t, std::size_t>> params;
  for (const Parameter* p : net.parameters()) {
    auto& [tensors, scalars] = params[p->branch()];
    ++tensors;
    scalars += p->value().numel();
  }
  const BlockCensus census = net.census();
  out << "branch  params   scalars  ConvBlk  DeconvBlk\n";
  for (const auto& [branch, counts] : params) {
    const auto blocks = census.per_branch.count(branch) ? census.per_branch.at(branch) : std::pair<int, int>{0, 0};
    char line[96];
    std::snprintf(line, sizeof line, "%-6s  %6zu  %8zu  %7d  %9d\n", std::string(branch_name(branch)).c_str(),
                  counts.first, counts.second, blocks.first, blocks.second);
    out << line;
  }
  out << "ConvBlk: " << census.conv_blocks << ", DeconvBlk: " << census.deconv_blocks << "\n";
  if (nc.preset == "paper-scale") {
    const int want_deconv = ckpt.phase == 1 ? 11 : 7;
    if (census.conv_blocks != 9 || census.deconv_blocks != want_deconv) {
      throw CheckpointError("paper-scale phase-" + std::to_string(ckpt.phase) + " network must have 9 ConvBlk and " +
                            std::to_string(want_deconv) + " DeconvBlk");
    }
    out << "paper-scale block census ok\n";
  }
  return kOk;
}

}  // namespace

std::set<std::string> run_config_keys() {
  std::set<std::string> keys = network_config_keys();
  keys.insert(kOwnKeys.begin(), kOwnKeys.end());
  for (const auto& k : train_config_keys()) keys.insert(k);
  return keys;
}

RunConfig read_run_config(const KeyValueConfig& kv, const fs::path& base) {
  const auto unknown = kv.unknown_keys(run_config_keys());
  if (!unknown.empty()) {
    std::string msg = "unknown config key";
    msg += unknown.size() > 1 ? "s:" : ":";
    for (const auto& k : unknown) msg += " " + k;
    throw ConfigError(msg);
  }
  RunConfig rc;
  rc.network = read_network_config(kv);
  validate_config(rc.network);
  rc.train = read_train_config(kv);
  if (auto v = kv.get("train.depth_only")) rc.depth_only = parse_bool("train.depth_only", *v);

  rc.gen.seed = read_size(kv, "gen.seed", rc.gen.seed);
  rc.gen_count = read_size(kv, "gen.count", rc.gen_count, 1);
  if (auto v = kv.get("gen.mode")) rc.gen_mode = parse_gen_mode(*v);
  rc.gen.height = read_size(kv, "gen.height", rc.gen.height, 4);
  rc.gen.width = read_size(kv, "gen.width", rc.gen.width, 4);
  rc.gen.n_classes = static_cast<int>(read_size(kv, "gen.classes", rc.gen.n_classes, 3));
  if (rc.gen.n_classes > 255) throw ConfigError("gen.classes must be <= 255");
  if (auto v = kv.get("gen.texture")) rc.gen.texture = parse_double("gen.texture", *v);

  rc.depth_dir = read_path(kv, "data.depth", base);
  rc.semantic_dir = read_path(kv, "data.semantic", base);
  rc.test_dir = read_path(kv, "data.test", base);
  rc.output_dir = read_path(kv, "output.dir", base, base.empty() ? fs::path("out") : base / "out");

  if (auto v = kv.get("eval.cap")) rc.cap = parse_double("eval.cap", *v);
  if (!(rc.cap > 1)) throw ConfigError("eval.cap must be > 1");
  if (auto v = kv.get("eval.aggregation")) {
    if (*v == "pooled") rc.aggregation = Aggregation::PixelPooled;
    else if (*v == "per-image") rc.aggregation = Aggregation::PerImage;
    else throw ConfigError("eval.aggregation must be pooled or per-image, got '" + *v + "'");
  }
  return rc;
}

RunConfig load_run_config(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw ConfigError("config file " + path.string() + " not found");
  const auto kv = KeyValueConfig::parse(read_text_file(path), path.string());
  return read_run_config(kv, fs::absolute(path).parent_path());
}

KeyValueConfig effective_config(const RunConfig& rc) {
  KeyValueConfig kv;
  write_network_config(rc.network, kv);
  write_train_config(rc.train, kv);
  kv.set("train.depth_only", rc.depth_only ? "true" : "false");
  kv.set("gen.seed", std::to_string(rc.gen.seed));
  kv.set("gen.count", std::to_string(rc.gen_count));
  kv.set("gen.mode", gen_mode_name(rc.gen_mode));
  kv.set("gen.height", std::to_string(rc.gen.height));
  kv.set("gen.width", std::to_string(rc.gen.width));
  kv.set("gen.classes", std::to_string(rc.gen.n_classes));
  kv.set("gen.texture", format_double(rc.gen.texture));
  if (!rc.depth_dir.empty()) kv.set("data.depth", absolute_str(rc.depth_dir));
  if (!rc.semantic_dir.empty()) kv.set("data.semantic", absolute_str(rc.semantic_dir));
  if (!rc.test_dir.empty()) kv.set("data.test", absolute_str(rc.test_dir));
  kv.set("output.dir", absolute_str(rc.output_dir));
  kv.set("eval.cap", format_double(rc.cap));
  kv.set("eval.aggregation", rc.aggregation == Aggregation::PixelPooled ? "pooled" : "per-image");
  return kv;
}

Tensor colorize_depth(const Tensor& depth, double lo, double hi) {
  const std::size_t h = depth.dim(depth.rank() - 2), w = depth.dim(depth.rank() - 1);
  Tensor rgb(Shape{3, h, w});
  const auto ramp = [](double x) { return std::clamp(1.5 - std::abs(x), 0.0, 1.0); };
  for (std::size_t i = 0; i < h * w; ++i) {
    const double d = std::clamp(static_cast<double>(depth[i]), lo, hi);
    const double t = 1.0 - (d - lo) / (hi - lo);
    rgb[i] = static_cast<Real>(ramp(4 * t - 3));
    rgb[h * w + i] = static_cast<Real>(ramp(4 * t - 2));
    rgb[2 * h * w + i] = static_cast<Real>(ramp(4 * t - 1));
  }
  return rgb;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Depth estimation from heterogeneous depth and semantic datasets"};
  app.require_subcommand(1);
  std::string config_path, ckpt, image;
  bool force = false, no_l0 = false, no_augment = false;
  TrainFlags tf;
  double cap = 0;
  unsigned threads = 1;

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset to output.dir");
  add_config_option(gen, config_path, true);
  gen->add_flag("--force", force, "Overwrite a non-empty output directory");

  auto* train = app.add_subcommand("train", "Run training phase 1 or 2");
  add_config_option(train, config_path, true);
  train->add_option("--phase", tf.phase, "1 (classification) or 2 (regression)")->check(CLI::IsMember({1, 2}));
  train->add_option("--init-from", tf.init_from, "Phase-1 checkpoint that phase 2 starts from");
  train->add_option("--resume", tf.resume, "Checkpoint of this phase to continue from");
  train->add_flag("--force", tf.force, "Overwrite an existing run in output.dir");
  train->add_flag("--no-l0", no_l0, "Skip L0 smoothing");
  train->add_flag("--no-augment", no_augment, "Skip data augmentation");

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on data.test");
  add_config_option(eval, config_path, true);
  eval->add_option("--ckpt", ckpt, "Checkpoint to evaluate")->required();
  eval->add_option("--cap", cap, "Depth cap in meters (50 or 80)")->check(CLI::IsMember({50.0, 80.0}));
  eval->add_option("--threads", threads, "Worker threads")->check(CLI::Range(1u, 256u));
  eval->add_flag("--no-l0", no_l0, "Skip L0 smoothing");

  auto* predict = app.add_subcommand("predict", "Predict depth for one PPM image");
  add_config_option(predict, config_path, true);
  predict->add_option("--ckpt", ckpt, "Checkpoint to use")->required();
  predict->add_option("image", image, "Input PPM image")->required();
  predict->add_flag("--no-l0", no_l0, "Skip L0 smoothing");

  auto* inspect = app.add_subcommand("inspect", "Print parameter and block census of a checkpoint");
  inspect->add_option("--ckpt", ckpt, "Checkpoint to inspect")->required();

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (inspect->parsed()) return cmd_inspect(ckpt, out);
    RunConfig rc = load_run_config(config_path);
    if (no_l0) rc.train.l0 = false;
    if (no_augment) rc.train.augment = false;
    if (cap > 0) rc.cap = cap;
    if (gen->parsed()) return cmd_gen_data(rc, force, out);
    if (train->parsed()) return cmd_train(rc, tf, out);
    if (eval->parsed()) return cmd_eval(rc, ckpt, threads, out);
    return cmd_predict(rc, ckpt, image, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const ParameterError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  }
}

}  // namespace cfdepth::cli
