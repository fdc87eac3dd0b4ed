#include "cfdepth/network.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

#include "cfdepth/data/binning.hpp"
#include "cfdepth/errors.hpp"
#include "cfdepth/random.hpp"

CFDEPTH_BEGIN_NAMESPACE

namespace {

constexpr int kConvKernel = 3;
constexpr int kDeconvKernel = 4;
constexpr int kDeconvStride = 2;
constexpr int kDeconvPad = 1;
constexpr std::size_t kImageChannels = 3;

std::uint64_t name_hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : s) {
    h ^= static_cast<std::uint8_t>(ch);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Planning: levels, channel counts and skip resolution, shared by validation
// and construction.

struct BlockPlan {
  std::string name;
  bool deconv = false;
  int sets = 0;
  bool pool = false;
  int level_in = 0, level_out = 0;
  int in_ch = 0, out_ch = 0;
  std::string skip;  // resolved layer name, empty for none
  int skip_ch = 0;
};

struct SubNetPlan {
  Branch branch = Branch::DSC;
  std::string prefix;
  std::vector<BlockPlan> blocks;
  int in_level = 0, out_level = 0, in_ch = 0, out_ch = 0;
};

struct Feature {
  std::string name;
  int level;
  int channels;
};

struct Plan {
  SubNetPlan dsc, dc, sc, reg;
  int max_level = 0;
  std::vector<std::string> errors;
};

const Feature* find_feature(const std::vector<Feature>& features, std::string_view name) {
  for (const auto& f : features)
    if (f.name == name) return &f;
  return nullptr;
}

// Latest feature registered at `level`.
const Feature* latest_at(const std::vector<Feature>& features, int level) {
  for (auto it = features.rbegin(); it != features.rend(); ++it)
    if (it->level == level) return &*it;
  return nullptr;
}

SubNetPlan plan_subnet(const NetworkConfig& cfg, const SubNetSpec& spec, Branch branch, std::string prefix,
                       int in_level, int in_ch, std::vector<Feature>& trunk, std::vector<std::string>& errors,
                       int& max_level) {
  SubNetPlan plan;
  plan.branch = branch;
  plan.prefix = prefix;
  plan.in_level = in_level;
  plan.in_ch = in_ch;
  const bool is_trunk = branch == Branch::DSC;
  std::vector<Feature> own;
  int level = in_level, ch = in_ch;

  for (std::size_t i = 0; i < spec.conv.size(); ++i) {
    const auto& b = spec.conv[i];
    BlockPlan bp;
    bp.name = prefix + ".blk" + std::to_string(i);
    if (b.sets < 2 || b.sets > 4) {
      errors.push_back(bp.name + ": a ConvBlk chains 2 to 4 sets, got " + std::to_string(b.sets));
    }
    bp.sets = b.sets;
    bp.pool = b.pool;
    bp.level_in = level;
    bp.in_ch = ch;
    bp.out_ch = cfg.channels_at(level);
    (is_trunk ? trunk : own).push_back({bp.name, level, bp.out_ch});
    if (b.pool) ++level;
    bp.level_out = level;
    max_level = std::max(max_level, level);
    ch = bp.out_ch;
    plan.blocks.push_back(bp);
  }
  for (std::size_t j = 0; j < spec.deconv.size(); ++j) {
    const auto& d = spec.deconv[j];
    BlockPlan bp;
    bp.name = prefix + ".dblk" + std::to_string(j);
    bp.deconv = true;
    bp.level_in = level;
    bp.in_ch = ch;
    bp.level_out = level - 1;
    if (bp.level_out < 0) {
      errors.push_back(bp.name + ": upsampling above input resolution");
      bp.level_out = 0;
    }
    const int deconv_ch = cfg.channels_at(bp.level_out);
    const Feature* source = nullptr;
    if (d.skip == "auto") {
      if (branch == Branch::REG) {
        source = latest_at(own, bp.level_out);
      } else {
        source = latest_at(trunk, bp.level_out);
        if (source == nullptr) source = latest_at(own, bp.level_out);
      }
    } else if (d.skip != "none" && !d.skip.empty()) {
      source = find_feature(trunk, d.skip);
      if (source == nullptr) source = find_feature(own, d.skip);
      if (source == nullptr) {
        errors.push_back(bp.name + ": skip source '" + d.skip + "' is not an earlier " +
                         (is_trunk ? std::string("DSC") : "DSC or " + prefix) + " ConvBlk");
      } else if (source->level != bp.level_out) {
        errors.push_back(bp.name + ": skip source '" + d.skip + "' has spatial level " +
                         std::to_string(source->level) + ", deconv output has level " +
                         std::to_string(bp.level_out));
        source = nullptr;
      }
    }
    if (source != nullptr) {
      bp.skip = source->name;
      bp.skip_ch = source->channels;
    }
    bp.out_ch = deconv_ch + bp.skip_ch;
    level = bp.level_out;
    ch = bp.out_ch;
    plan.blocks.push_back(bp);
  }
  plan.out_level = level;
  plan.out_ch = ch;
  return plan;
}

Plan make_plan(const NetworkConfig& cfg) {
  Plan p;
  auto& e = p.errors;
  if (cfg.height == 0 || cfg.width == 0) e.push_back("input geometry must be non-empty");
  if (cfg.depth_classes < 2) e.push_back("depth_classes must be >= 2");
  if (cfg.semantic_classes < 2) e.push_back("semantic_classes must be >= 2");
  if (cfg.semantic_classes > 255) e.push_back("semantic_classes must fit an 8-bit label map (< 256)");
  if (!(cfg.depth_min > 0 && cfg.depth_max > cfg.depth_min)) e.push_back("depth range must satisfy 0 < min < max");
  if (!(cfg.scale > 0)) e.push_back("scale must be positive");
  if (cfg.base_width < 1 || cfg.max_width < cfg.base_width) e.push_back("need 1 <= base_width <= max_width");
  if (!(cfg.dropout >= 0 && cfg.dropout < 1)) e.push_back("dropout must lie in [0, 1)");
  if (cfg.dsc.conv.empty()) e.push_back("DSC needs at least one ConvBlk");
  if (!e.empty()) return p;

  std::vector<Feature> trunk;
  p.dsc = plan_subnet(cfg, cfg.dsc, Branch::DSC, "dsc", 0, static_cast<int>(kImageChannels), trunk, e, p.max_level);
  p.dc = plan_subnet(cfg, cfg.dc, Branch::DC, "dc", p.dsc.out_level, p.dsc.out_ch, trunk, e, p.max_level);
  p.sc = plan_subnet(cfg, cfg.sc, Branch::SC, "sc", p.dsc.out_level, p.dsc.out_ch, trunk, e, p.max_level);
  p.reg = plan_subnet(cfg, cfg.reg, Branch::REG, "reg", 0, cfg.depth_classes, trunk, e, p.max_level);
  if (p.dc.out_level != 0) e.push_back("DC output is at level " + std::to_string(p.dc.out_level) + ", not full resolution");
  if (p.sc.out_level != 0) e.push_back("SC output is at level " + std::to_string(p.sc.out_level) + ", not full resolution");
  if (p.reg.out_level != 0) e.push_back("REG output is at level " + std::to_string(p.reg.out_level) + ", not full resolution");

  if (cfg.preset == "paper-scale") {
    const auto count = [](const SubNetSpec& s) { return std::make_pair(s.conv.size(), s.deconv.size()); };
    const auto [dsc_c, dsc_d] = count(cfg.dsc);
    const auto [dc_c, dc_d] = count(cfg.dc);
    const auto [sc_c, sc_d] = count(cfg.sc);
    const auto [reg_c, reg_d] = count(cfg.reg);
    if (dsc_c + dc_c + sc_c != 9 || dsc_d + dc_d + sc_d != 11) {
      e.push_back("paper-scale phase 1 must have 9 ConvBlk and 11 DeconvBlk, got " + std::to_string(dsc_c + dc_c + sc_c) +
                  " and " + std::to_string(dsc_d + dc_d + sc_d));
    }
    if (dsc_c + dc_c + reg_c != 9 || dsc_d + dc_d + reg_d != 7) {
      e.push_back("paper-scale phase 2 must have 9 ConvBlk and 7 DeconvBlk, got " +
                  std::to_string(dsc_c + dc_c + reg_c) + " and " + std::to_string(dsc_d + dc_d + reg_d));
    }
  }
  return p;
}

std::string conv_list_str(const std::vector<ConvBlockSpec>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(v[i].sets) + (v[i].pool ? "p" : "");
  }
  return s;
}

std::string deconv_list_str(const std::vector<DeconvBlockSpec>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += v[i].skip;
  }
  return s;
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> items;
  if (value.empty()) return items;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    items.push_back(b == std::string::npos ? "" : item.substr(b, e - b + 1));
  }
  return items;
}

std::vector<ConvBlockSpec> parse_conv_list(const std::string& key, const std::string& value) {
  std::vector<ConvBlockSpec> out;
  for (auto item : split_list(value)) {
    ConvBlockSpec b;
    b.pool = !item.empty() && item.back() == 'p';
    if (b.pool) item.pop_back();
    b.sets = static_cast<int>(parse_int(key, item));
    out.push_back(b);
  }
  return out;
}

std::vector<DeconvBlockSpec> parse_deconv_list(const std::string& value) {
  std::vector<DeconvBlockSpec> out;
  for (auto& item : split_list(value)) out.push_back({item});
  return out;
}

}  // namespace

int NetworkConfig::channels_at(int level) const {
  const double w = std::min(static_cast<double>(base_width) * std::ldexp(1.0, level), static_cast<double>(max_width));
  return std::max(1, static_cast<int>(std::lround(w * scale)));
}

NetworkConfig preset_config(std::string_view name) {
  NetworkConfig cfg;
  cfg.preset = std::string(name);
  if (name == "paper-scale") {
    // Half-resolution KITTI frames; padded internally to multiples of 2^7.
    cfg.height = 188;
    cfg.width = 620;
    cfg.scale = 1.0;
    cfg.dsc.conv = {{2, true}, {2, true}, {3, true}, {3, true}, {4, true}};
    cfg.dsc.deconv = {{}};
    cfg.dc.conv = {{3, false}, {3, false}};
    cfg.dc.deconv = {{}, {}, {}, {}};
    cfg.sc.conv = {{2, true}, {2, true}};
    cfg.sc.deconv = {{}, {}, {}, {}, {}, {}};
    cfg.reg.conv = {{2, true}, {2, true}};
    cfg.reg.deconv = {{}, {}};
    return cfg;
  }
  if (name == "tiny") {
    cfg.height = 32;
    cfg.width = 64;
    cfg.scale = 0.25;
    cfg.dsc.conv = {{2, true}, {2, true}};
    cfg.dsc.deconv = {{}};
    cfg.dc.conv = {{2, false}};
    cfg.dc.deconv = {{}};
    cfg.sc.conv = {{2, false}};
    cfg.sc.deconv = {{}};
    cfg.reg.conv = {{2, true}};
    cfg.reg.deconv = {{}};
    return cfg;
  }
  throw ConfigError("unknown network preset '" + std::string(name) + "' (expected 'paper-scale' or 'tiny')");
}

std::vector<std::string> config_violations(const NetworkConfig& config) { return make_plan(config).errors; }

void validate_config(const NetworkConfig& config) {
  const auto errors = config_violations(config);
  if (errors.empty()) return;
  std::string msg = "invalid network config:";
  for (const auto& e : errors) msg += "\n  - " + e;
  throw ConfigError(msg);
}

std::set<std::string> network_config_keys() {
  std::set<std::string> keys = {"network.preset",     "network.height",    "network.width",
                                "network.depth_classes", "network.semantic_classes", "network.depth_min",
                                "network.depth_max",  "network.scale",     "network.base_width",
                                "network.max_width",  "network.dropout"};
  for (const char* sub : {"dsc", "dc", "sc", "reg"}) {
    keys.insert(std::string("network.") + sub + ".conv");
    keys.insert(std::string("network.") + sub + ".deconv");
  }
  return keys;
}

NetworkConfig read_network_config(const KeyValueConfig& kv) {
  NetworkConfig cfg = preset_config(kv.get("network.preset").value_or("tiny"));
  const auto num = [&](const char* key, auto& field) {
    if (auto v = kv.get(key)) {
      using T = std::decay_t<decltype(field)>;
      if constexpr (std::is_floating_point_v<T>) {
        field = parse_double(key, *v);
      } else {
        const auto x = parse_int(key, *v);
        if (x < 0) throw ConfigError(std::string(key) + ": must be non-negative");
        field = static_cast<T>(x);
      }
    }
  };
  num("network.height", cfg.height);
  num("network.width", cfg.width);
  num("network.depth_classes", cfg.depth_classes);
  num("network.semantic_classes", cfg.semantic_classes);
  num("network.depth_min", cfg.depth_min);
  num("network.depth_max", cfg.depth_max);
  num("network.scale", cfg.scale);
  num("network.base_width", cfg.base_width);
  num("network.max_width", cfg.max_width);
  num("network.dropout", cfg.dropout);
  const std::pair<const char*, SubNetSpec*> subs[] = {{"dsc", &cfg.dsc}, {"dc", &cfg.dc}, {"sc", &cfg.sc}, {"reg", &cfg.reg}};
  for (auto [sub, spec] : subs) {
    const std::string conv_key = std::string("network.") + sub + ".conv";
    const std::string deconv_key = std::string("network.") + sub + ".deconv";
    if (auto v = kv.get(conv_key)) spec->conv = parse_conv_list(conv_key, *v);
    if (auto v = kv.get(deconv_key)) spec->deconv = parse_deconv_list(*v);
  }
  return cfg;
}

void write_network_config(const NetworkConfig& cfg, KeyValueConfig& kv) {
  kv.set("network.preset", cfg.preset);
  kv.set("network.height", std::to_string(cfg.height));
  kv.set("network.width", std::to_string(cfg.width));
  kv.set("network.depth_classes", std::to_string(cfg.depth_classes));
  kv.set("network.semantic_classes", std::to_string(cfg.semantic_classes));
  kv.set("network.depth_min", format_double(cfg.depth_min));
  kv.set("network.depth_max", format_double(cfg.depth_max));
  kv.set("network.scale", format_double(cfg.scale));
  kv.set("network.base_width", std::to_string(cfg.base_width));
  kv.set("network.max_width", std::to_string(cfg.max_width));
  kv.set("network.dropout", format_double(cfg.dropout));
  const std::pair<const char*, const SubNetSpec*> subs[] = {{"dsc", &cfg.dsc}, {"dc", &cfg.dc}, {"sc", &cfg.sc}, {"reg", &cfg.reg}};
  for (auto [sub, spec] : subs) {
    kv.set(std::string("network.") + sub + ".conv", conv_list_str(spec->conv));
    kv.set(std::string("network.") + sub + ".deconv", deconv_list_str(spec->deconv));
  }
}

// ---------------------------------------------------------------------------
// Construction

namespace {

struct BnLayer {
  Parameter* scale = nullptr;
  Parameter* shift = nullptr;
  RunningStats* stats = nullptr;
  std::size_t* passes = nullptr;  // samples folded in by the current recalibration
};

struct SetLayer {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;
  BnLayer bn;
  std::uint64_t uid = 0;
};

struct ConvLayer {
  std::string name;
  std::vector<SetLayer> sets;
  bool pool = false;
};

struct DeconvLayer {
  std::string name;
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;
  BnLayer bn;
  std::string skip;
};

struct HeadLayer {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;
};

struct SubNet {
  Branch branch = Branch::DSC;
  bool present = false;
  std::vector<ConvLayer> conv;
  std::vector<DeconvLayer> deconv;
  std::optional<HeadLayer> head;
};

struct Buffer {
  std::string name;
  Branch branch;
  RunningStats stats;
  std::size_t passes = 0;
};

}  // namespace

struct Network::Impl {
  NetworkConfig config;
  Phase phase = Phase::One;
  int pool_depth = 0;
  std::vector<std::unique_ptr<Parameter>> params;
  std::vector<std::unique_ptr<Buffer>> buffers;
  SubNet dsc, dc, sc, reg;
  std::vector<double> depth_centers;
  std::uint64_t seed = 0;

  Parameter* weight(const std::string& name, Shape shape, Branch branch, double fan_in) {
    Tensor value(std::move(shape));
    Rng rng(derive_seed(seed, {name_hash(name)}));
    const double stddev = std::sqrt(2.0 / fan_in);
    for (auto& v : value.data()) v = static_cast<Real>(stddev * rng.normal());
    params.push_back(std::make_unique<Parameter>(name, std::move(value), branch));
    return params.back().get();
  }

  Parameter* constant(const std::string& name, std::size_t n, Branch branch, Real fill) {
    params.push_back(std::make_unique<Parameter>(name, Tensor(Shape{n}, fill), branch));
    return params.back().get();
  }

  BnLayer batch_norm(const std::string& prefix, std::size_t channels, Branch branch) {
    BnLayer bn;
    bn.scale = constant(prefix + ".bn.scale", channels, branch, Real(1));
    bn.shift = constant(prefix + ".bn.shift", channels, branch, Real(0));
    buffers.push_back(std::make_unique<Buffer>(Buffer{prefix + ".bn.running", branch, RunningStats(channels)}));
    bn.stats = &buffers.back()->stats;
    bn.passes = &buffers.back()->passes;
    return bn;
  }

  SubNet build(const SubNetPlan& plan, std::optional<int> head_classes) {
    SubNet net;
    net.branch = plan.branch;
    net.present = true;
    for (const auto& bp : plan.blocks) {
      const auto in = static_cast<std::size_t>(bp.in_ch), out = static_cast<std::size_t>(bp.out_ch);
      if (!bp.deconv) {
        ConvLayer layer{bp.name, {}, bp.pool};
        std::size_t ch = in;
        for (int s = 0; s < bp.sets; ++s) {
          const std::string set = bp.name + ".set" + std::to_string(s);
          SetLayer sl;
          sl.weight = weight(set + ".conv.weight", {out, ch, kConvKernel, kConvKernel}, plan.branch,
                             static_cast<double>(ch * kConvKernel * kConvKernel));
          sl.bias = constant(set + ".conv.bias", out, plan.branch, Real(0));
          sl.bn = batch_norm(set, out, plan.branch);
          sl.uid = name_hash(set);
          layer.sets.push_back(sl);
          ch = out;
        }
        net.conv.push_back(std::move(layer));
      } else {
        const auto up = static_cast<std::size_t>(bp.out_ch - bp.skip_ch);
        DeconvLayer layer;
        layer.name = bp.name;
        layer.weight = weight(bp.name + ".deconv.weight", {in, up, kDeconvKernel, kDeconvKernel}, plan.branch,
                              static_cast<double>(in * kDeconvKernel * kDeconvKernel) / (kDeconvStride * kDeconvStride));
        layer.bias = constant(bp.name + ".deconv.bias", up, plan.branch, Real(0));
        layer.bn = batch_norm(bp.name, up, plan.branch);
        layer.skip = bp.skip;
        net.deconv.push_back(std::move(layer));
      }
    }
    if (head_classes) {
      const auto in = static_cast<std::size_t>(plan.out_ch), out = static_cast<std::size_t>(*head_classes);
      const std::string prefix = std::string(plan.prefix) + ".head";
      net.head = HeadLayer{weight(prefix + ".weight", {out, in, 1, 1}, plan.branch, static_cast<double>(in)),
                           constant(prefix + ".bias", out, plan.branch, Real(0))};
    }
    return net;
  }
};

namespace {

Var run_subnet(const SubNet& net, Var x, Tape& tape, const ForwardOptions& opt, double dropout_rate,
               std::unordered_map<std::string, Var>& features) {
  const bool train = opt.mode == Mode::Train;
  auto P = [&](Parameter* p) { return train ? tape.parameter(*p) : tape.constant(p->value()); };
  auto bn = [&](Var v, const BnLayer& layer) {
    if (!opt.recalibrate) return batch_norm(v, P(layer.scale), P(layer.shift), opt.mode, *layer.stats);
    const std::size_t n = v.value().dim(0);
    *layer.passes += n;
    const double momentum = static_cast<double>(n) / static_cast<double>(*layer.passes);
    return batch_norm(v, P(layer.scale), P(layer.shift), Mode::Train, *layer.stats, momentum);
  };
  for (const auto& block : net.conv) {
    for (const auto& set : block.sets) {
      x = conv2d(x, P(set.weight), P(set.bias), 1, kConvKernel / 2);
      x = bn(x, set.bn);
      if (dropout_rate > 0 && !opt.recalibrate) x = dropout(x, dropout_rate, opt.mode, derive_seed(opt.seed, {set.uid}));
      x = relu(x);
    }
    features[block.name] = x;
    if (block.pool) x = avg_pool(x, 2);
  }
  for (const auto& block : net.deconv) {
    x = deconv2d(x, P(block.weight), P(block.bias), kDeconvStride, kDeconvPad);
    x = relu(bn(x, block.bn));
    if (!block.skip.empty()) x = concat_channels(x, features.at(block.skip));
  }
  if (net.head) x = conv2d(x, P(net.head->weight), P(net.head->bias), 1, 0);
  return x;
}

}  // namespace

Network::Network(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
Network::Network(Network&&) noexcept = default;
Network& Network::operator=(Network&&) noexcept = default;
Network::~Network() = default;

Phase Network::phase() const noexcept { return impl_->phase; }
const NetworkConfig& Network::config() const noexcept { return impl_->config; }
int Network::pool_depth() const noexcept { return impl_->pool_depth; }

void Network::begin_batch_norm_recalibration() {
  for (auto& b : impl_->buffers) b->passes = 0;
}

std::vector<Parameter*> Network::parameters() const {
  std::vector<Parameter*> out;
  for (const auto& p : impl_->params) out.push_back(p.get());
  return out;
}

Parameter* Network::find_parameter(std::string_view name) const {
  for (const auto& p : impl_->params)
    if (p->name() == name) return p.get();
  return nullptr;
}

std::vector<NamedTensor> Network::state() const {
  std::vector<NamedTensor> out;
  for (const auto& p : impl_->params) out.push_back({p->name(), p->value()});
  for (const auto& b : impl_->buffers) {
    out.push_back({b->name + "_mean", b->stats.mean});
    out.push_back({b->name + "_var", b->stats.var});
  }
  return out;
}

LoadReport Network::load_state(const std::vector<NamedTensor>& tensors, const std::set<Branch>& optional_branches) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t.value;
  std::set<std::string> consumed;
  auto load = [&](const std::string& name, Branch branch, Tensor& dst) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) {
      if (optional_branches.count(branch)) return;
      throw CheckpointError("checkpoint is missing parameter '" + name + "'");
    }
    if (it->second->shape() != dst.shape()) {
      throw CheckpointError("checkpoint parameter '" + name + "' has shape " + shape_str(it->second->shape()) +
                            ", network expects " + shape_str(dst.shape()));
    }
    dst = *it->second;
    consumed.insert(name);
  };
  for (auto& p : impl_->params) load(p->name(), p->branch(), p->value());
  for (auto& b : impl_->buffers) {
    load(b->name + "_mean", b->branch, b->stats.mean);
    load(b->name + "_var", b->branch, b->stats.var);
  }
  LoadReport report;
  for (const auto& t : tensors)
    if (!consumed.count(t.name)) report.unused.push_back(t.name);
  return report;
}

BlockCensus Network::census() const {
  BlockCensus c;
  for (const SubNet* s : {&impl_->dsc, &impl_->dc, &impl_->sc, &impl_->reg}) {
    if (!s->present) continue;
    const int nc = static_cast<int>(s->conv.size()), nd = static_cast<int>(s->deconv.size());
    c.conv_blocks += nc;
    c.deconv_blocks += nd;
    c.per_branch[s->branch] = {nc, nd};
  }
  return c;
}

NetworkOutputs Network::forward(Tape& tape, const Tensor& images, const ForwardOptions& options) const {
  require_rank(images, 4, "network input");
  if (images.dim(1) != kImageChannels) {
    throw DimensionError("network input must have 3 channels, got " + shape_str(images.shape()));
  }
  const auto n = images.dim(0), h = images.dim(2), w = images.dim(3);
  if (n == 0 || h == 0 || w == 0) throw DimensionError("network input is empty: " + shape_str(images.shape()));
  const std::size_t multiple = std::size_t{1} << impl_->pool_depth;
  const std::size_t hp = (h + multiple - 1) / multiple * multiple, wp = (w + multiple - 1) / multiple * multiple;
  if ((hp != h || wp != w) && !options.pad_input) {
    throw DimensionError("input " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible by 2^" +
                         std::to_string(impl_->pool_depth) + " = " + std::to_string(multiple));
  }

  Var x;
  if (hp == h && wp == w) {
    x = tape.constant(images);
  } else {
    Tensor padded(Shape{n, kImageChannels, hp, wp});
    for (std::size_t plane = 0; plane < n * kImageChannels; ++plane)
      for (std::size_t i = 0; i < h; ++i)
        std::copy_n(images.ptr() + (plane * h + i) * w, w, padded.ptr() + (plane * hp + i) * wp);
    x = tape.constant(std::move(padded));
  }

  const double rate = impl_->config.dropout;
  std::unordered_map<std::string, Var> features;
  const Var trunk = run_subnet(impl_->dsc, x, tape, options, rate, features);
  NetworkOutputs out;
  if (impl_->phase == Phase::One) {
    if (options.heads != HeadSet::Semantic)
      out.depth_logits = crop(run_subnet(impl_->dc, trunk, tape, options, rate, features), h, w);
    if (options.heads != HeadSet::Depth)
      out.semantic_logits = crop(run_subnet(impl_->sc, trunk, tape, options, rate, features), h, w);
    return out;
  }
  if (options.heads == HeadSet::Semantic) throw ContractError("phase-2 network has no semantic head");
  const Var logits = run_subnet(impl_->dc, trunk, tape, options, rate, features);
  const Var residual = run_subnet(impl_->reg, logits, tape, options, rate, features);
  out.depth = crop(add(softmax_expectation(logits, impl_->depth_centers), residual), h, w);
  return out;
}

Network build_network(const NetworkConfig& config, Phase phase, std::uint64_t seed) {
  const Plan plan = make_plan(config);
  if (!plan.errors.empty()) validate_config(config);
  auto impl = std::make_unique<Network::Impl>();
  impl->config = config;
  impl->phase = phase;
  impl->seed = seed;
  impl->pool_depth = plan.max_level;
  impl->depth_centers = DepthBinning{config.depth_classes, config.depth_min, config.depth_max}.centers();
  impl->dsc = impl->build(plan.dsc, std::nullopt);
  impl->dc = impl->build(plan.dc, config.depth_classes);
  if (phase == Phase::One) {
    impl->sc = impl->build(plan.sc, config.semantic_classes);
  } else {
    impl->reg = impl->build(plan.reg, 1);
  }
  return Network(std::move(impl));
}

Network build_phase1(const NetworkConfig& config, std::uint64_t seed) { return build_network(config, Phase::One, seed); }

Network build_phase2(const NetworkConfig& config, const Checkpoint& checkpoint, std::uint64_t seed, LoadReport* report) {
  Network net = build_network(config, Phase::Two, seed);
  LoadReport r = net.load_state(checkpoint.tensors, {Branch::REG});
  if (report) *report = std::move(r);
  return net;
}

CFDEPTH_END_NAMESPACE
