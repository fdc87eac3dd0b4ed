#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "cfdepth/errors.hpp"
#include "cfdepth/network.hpp"
#include "cfdepth/random.hpp"

using namespace cfdepth;

namespace {

NetworkConfig small_paper_scale() {
  NetworkConfig cfg = preset_config("paper-scale");
  cfg.scale = 1.0 / 32;  // block structure is what matters here
  cfg.height = 128;
  cfg.width = 128;
  return cfg;
}

Tensor random_images(std::size_t n, std::size_t h, std::size_t w, std::uint64_t seed) {
  Tensor t(Shape{n, 3, h, w});
  Rng rng(seed);
  for (auto& v : t.data()) v = static_cast<Real>(rng.uniform());
  return t;
}

// Independent shape propagation: conv 3x3 s1 p1 keeps size, pooling halves,
// deconv 4x4 s2 p1 doubles, 1x1 head keeps size.
std::pair<std::size_t, std::size_t> propagate(const SubNetSpec& s, std::size_t h, std::size_t w) {
  for (const auto& b : s.conv) {
    for (int i = 0; i < b.sets; ++i) {
      h = (h + 2 - 3) / 1 + 1;
      w = (w + 2 - 3) / 1 + 1;
    }
    if (b.pool) h /= 2, w /= 2;
  }
  for (std::size_t i = 0; i < s.deconv.size(); ++i) {
    h = (h - 1) * 2 - 2 + 4;
    w = (w - 1) * 2 - 2 + 4;
  }
  return {h, w};
}

}  // namespace

TEST(NetworkConfig, PaperScalePhaseOneCensus) {
  const Network net = build_phase1(small_paper_scale(), 1);
  const auto c = net.census();
  EXPECT_EQ(c.conv_blocks, 9);
  EXPECT_EQ(c.deconv_blocks, 11);
}

TEST(NetworkConfig, PaperScalePhaseTwoCensus) {
  const Network net = build_network(small_paper_scale(), Phase::Two, 1);
  const auto c = net.census();
  EXPECT_EQ(c.conv_blocks, 9);
  EXPECT_EQ(c.deconv_blocks, 7);
  EXPECT_EQ(c.per_branch.at(Branch::REG), std::make_pair(2, 2));
  EXPECT_EQ(c.per_branch.count(Branch::SC), 0u);
}

TEST(NetworkConfig, PaperScaleValidates) {
  EXPECT_TRUE(config_violations(preset_config("paper-scale")).empty());
  EXPECT_TRUE(config_violations(preset_config("tiny")).empty());
}

TEST(NetworkConfig, ViolationsAreAllListed) {
  NetworkConfig cfg = preset_config("paper-scale");
  cfg.dsc.conv[0].sets = 5;
  cfg.sc.deconv.pop_back();
  const auto v = config_violations(cfg);
  // sets out of range, SC not at full resolution, phase-1 census off
  EXPECT_EQ(v.size(), 3u);
  try {
    validate_config(cfg);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    for (const auto& line : v) EXPECT_NE(std::string(e.what()).find(line), std::string::npos);
  }
  EXPECT_THROW(build_phase1(cfg, 0), ConfigError);
}

TEST(NetworkConfig, SkipSourceMustMatchSpatialSize) {
  NetworkConfig cfg = preset_config("tiny");
  cfg.dc.deconv[0].skip = "dsc.blk1";  // level 1, deconv lands at level 0
  EXPECT_EQ(config_violations(cfg).size(), 1u);
  cfg.dc.deconv[0].skip = "dsc.blk0";
  EXPECT_TRUE(config_violations(cfg).empty());
  cfg.dc.deconv[0].skip = "dsc.nope";
  EXPECT_EQ(config_violations(cfg).size(), 1u);
}

TEST(NetworkConfig, UnknownPresetRejected) { EXPECT_THROW(preset_config("huge"), ConfigError); }

TEST(NetworkConfig, KeyValueRoundTrip) {
  NetworkConfig cfg = preset_config("tiny");
  cfg.dropout = 0.125;
  cfg.dc.deconv[0].skip = "none";
  cfg.sc.conv.push_back({3, false});
  KeyValueConfig kv;
  write_network_config(cfg, kv);
  for (const auto& [k, v] : kv.entries()) EXPECT_TRUE(network_config_keys().count(k)) << k;
  EXPECT_EQ(read_network_config(kv), cfg);
}

TEST(NetworkConfig, ChannelWidths) {
  NetworkConfig cfg;
  cfg.scale = 1.0;
  EXPECT_EQ(cfg.channels_at(0), 32);
  EXPECT_EQ(cfg.channels_at(3), 256);
  EXPECT_EQ(cfg.channels_at(5), 512);
  cfg.scale = 0.25;
  EXPECT_EQ(cfg.channels_at(0), 8);
  cfg.scale = 0.001;
  EXPECT_EQ(cfg.channels_at(0), 1);
}

TEST(Network, PaperScaleBranchPartition) {
  const Network net = build_phase1(small_paper_scale(), 3);
  std::set<Branch> seen;
  for (const Parameter* p : net.parameters()) {
    seen.insert(p->branch());
    const std::string prefix = p->name().substr(0, p->name().find('.'));
    EXPECT_EQ(prefix, std::string(branch_name(p->branch())) == "DSC"  ? "dsc"
                      : std::string(branch_name(p->branch())) == "DC" ? "dc"
                                                                       : "sc")
        << p->name();
  }
  EXPECT_EQ(seen, (std::set<Branch>{Branch::DSC, Branch::DC, Branch::SC}));
}

TEST(Network, TinyDepthHeadShape) {
  const NetworkConfig cfg = preset_config("tiny");
  const Network net = build_phase1(cfg, 7);
  Tape tape;
  const auto out = net.forward(tape, random_images(1, 32, 64, 1), {});
  ASSERT_TRUE(out.depth_logits && out.semantic_logits);
  EXPECT_FALSE(out.depth);

  auto [h, w] = propagate(cfg.dsc, 32, 64);
  std::tie(h, w) = propagate(cfg.dc, h, w);
  EXPECT_EQ(out.depth_logits->shape(), (Shape{1, 24, h, w}));
  EXPECT_EQ(out.depth_logits->shape(), (Shape{1, 24, 32, 64}));
  EXPECT_EQ(out.semantic_logits->shape(), (Shape{1, 19, 32, 64}));
}

TEST(Network, SameSeedBitwiseIdentical) {
  const Network a = build_phase1(preset_config("tiny"), 11);
  const Network b = build_phase1(preset_config("tiny"), 11);
  const Network c = build_phase1(preset_config("tiny"), 12);
  const auto sa = a.state(), sb = b.state(), sc = c.state();
  ASSERT_EQ(sa.size(), sb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    EXPECT_EQ(sa[i].name, sb[i].name);
    EXPECT_TRUE(sa[i].value == sb[i].value) << sa[i].name;
    any_diff |= !(sa[i].value == sc[i].value);
  }
  EXPECT_TRUE(any_diff);
}

TEST(Network, HeInitialization) {
  NetworkConfig cfg = preset_config("tiny");
  cfg.scale = 2.0;
  const Network net = build_phase1(cfg, 5);
  const Parameter* p = net.find_parameter("dsc.blk1.set1.conv.weight");
  ASSERT_NE(p, nullptr);
  const double fan_in = static_cast<double>(p->value().dim(1) * 9);
  double ss = 0;
  for (Real v : p->value().data()) ss += static_cast<double>(v) * v;
  const double var = ss / static_cast<double>(p->value().numel());
  EXPECT_NEAR(var, 2.0 / fan_in, 0.1 * 2.0 / fan_in);
  for (Real v : net.find_parameter("dsc.blk1.set1.conv.bias")->value().data()) EXPECT_EQ(v, 0);
  for (Real v : net.find_parameter("dsc.blk1.set1.bn.scale")->value().data()) EXPECT_EQ(v, 1);
}

TEST(Network, EvalModeIdempotent) {
  Network net = build_phase1(preset_config("tiny"), 2);
  const Tensor x = random_images(2, 32, 64, 9);
  Tape t1, t2;
  const auto a = net.forward(t1, x, {Mode::Eval, 1});
  const auto b = net.forward(t2, x, {Mode::Eval, 2});
  EXPECT_TRUE(a.depth_logits->value() == b.depth_logits->value());
  EXPECT_TRUE(a.semantic_logits->value() == b.semantic_logits->value());
}

TEST(Network, IndivisibleInputRejectedUnlessPadded) {
  const Network net = build_phase1(preset_config("tiny"), 2);
  Tape tape;
  EXPECT_THROW(net.forward(tape, random_images(1, 30, 62, 1), {}), DimensionError);
  ForwardOptions opt;
  opt.pad_input = true;
  const auto out = net.forward(tape, random_images(1, 30, 62, 1), opt);
  EXPECT_EQ(out.depth_logits->shape(), (Shape{1, 24, 30, 62}));
  EXPECT_THROW(net.forward(tape, Tensor(Shape{1, 1, 32, 64}), {}), DimensionError);
}

TEST(Network, DepthOnlyPassReachesDscAndDcOnly) {
  NetworkConfig cfg = preset_config("tiny");
  Network net = build_phase1(cfg, 4);
  Tape tape;
  ForwardOptions opt{Mode::Train, 17, HeadSet::Depth};
  const auto out = net.forward(tape, random_images(2, 32, 64, 3), opt);
  ASSERT_TRUE(out.depth_logits);
  EXPECT_FALSE(out.semantic_logits);
  IndexMap target(2, 32, 64);
  std::fill(target.index.begin(), target.index.end(), 3);
  std::fill(target.valid.begin(), target.valid.end(), 1);
  tape.backward(softmax_cross_entropy(*out.depth_logits, target));
  for (const Parameter* p : net.parameters()) {
    const bool any = std::any_of(p->grad().data().begin(), p->grad().data().end(), [](Real g) { return g != 0; });
    if (p->branch() == Branch::SC) {
      EXPECT_FALSE(any) << p->name();
    } else if (p->name().find(".weight") != std::string::npos) {
      EXPECT_TRUE(any) << p->name();
    }
  }
}

TEST(Network, PhaseTwoExposesOneHead) {
  const NetworkConfig cfg = preset_config("tiny");
  const Network p1 = build_phase1(cfg, 1);
  Checkpoint ckpt;
  ckpt.tensors = p1.state();
  const Network p2 = build_phase2(cfg, ckpt, 2);
  Tape tape;
  const auto out = p2.forward(tape, random_images(1, 32, 64, 5), {});
  EXPECT_FALSE(out.depth_logits);
  EXPECT_FALSE(out.semantic_logits);
  ASSERT_TRUE(out.depth);
  EXPECT_EQ(out.depth->shape(), (Shape{1, 1, 32, 64}));
  ForwardOptions sem;
  sem.heads = HeadSet::Semantic;
  EXPECT_THROW(p2.forward(tape, random_images(1, 32, 64, 5), sem), ContractError);
}

TEST(Network, PhaseTwoLoadsTrunkAndReportsSemanticUnused) {
  const NetworkConfig cfg = preset_config("tiny");
  const Network p1 = build_phase1(cfg, 1);
  Checkpoint ckpt;
  ckpt.tensors = p1.state();
  LoadReport report;
  const Network p2 = build_phase2(cfg, ckpt, 99, &report);

  std::set<std::string> sc_names;
  for (const Parameter* p : p1.parameters())
    if (p->branch() == Branch::SC) sc_names.insert(p->name());
  for (const auto& t : ckpt.tensors)
    if (t.name.rfind("sc.", 0) == 0) sc_names.insert(t.name);
  EXPECT_EQ(std::set<std::string>(report.unused.begin(), report.unused.end()), sc_names);

  for (const Parameter* p : p2.parameters()) {
    EXPECT_NE(p->branch(), Branch::SC);
    if (p->branch() == Branch::DSC || p->branch() == Branch::DC) {
      const NamedTensor* src = ckpt.find(p->name());
      ASSERT_NE(src, nullptr) << p->name();
      EXPECT_TRUE(src->value == p->value()) << p->name();
    }
  }
}

TEST(Network, PhaseTwoLoadErrorsNameTheParameter) {
  const NetworkConfig cfg = preset_config("tiny");
  Checkpoint ckpt;
  ckpt.tensors = build_phase1(cfg, 1).state();
  auto missing = ckpt;
  missing.tensors.erase(std::find_if(missing.tensors.begin(), missing.tensors.end(),
                                     [](const NamedTensor& t) { return t.name == "dc.head.weight"; }));
  try {
    build_phase2(cfg, missing, 0);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("dc.head.weight"), std::string::npos);
  }
  auto wrong = ckpt;
  for (auto& t : wrong.tensors)
    if (t.name == "dsc.blk0.set0.conv.bias") t.value = Tensor(Shape{3});
  try {
    build_phase2(cfg, wrong, 0);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("dsc.blk0.set0.conv.bias"), std::string::npos);
  }
}

TEST(Network, TrainModeUpdatesRunningStats) {
  Network net = build_phase1(preset_config("tiny"), 1);
  const auto before = net.state();
  Tape tape;
  net.forward(tape, random_images(2, 32, 64, 1), {Mode::Train, 0, HeadSet::Depth});
  const auto after = net.state();
  bool dsc_changed = false, sc_changed = false;
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (before[i].name.find("running") == std::string::npos) continue;
    const bool changed = !(before[i].value == after[i].value);
    if (before[i].name.rfind("dsc.", 0) == 0) dsc_changed |= changed;
    if (before[i].name.rfind("sc.", 0) == 0) sc_changed |= changed;
  }
  EXPECT_TRUE(dsc_changed);
  EXPECT_FALSE(sc_changed);
}
