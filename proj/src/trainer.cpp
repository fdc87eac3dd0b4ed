#include "cfdepth/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>

#include "cfdepth/errors.hpp"
#include "cfdepth/random.hpp"

CFDEPTH_BEGIN_NAMESPACE

namespace {

// Stream identifiers for derive_seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kAugmentStream = 3;
constexpr std::uint64_t kDropoutStream = 4;

struct DoubleKey {
  const char* key;
  double AugmentConfig::*field;
};

constexpr DoubleKey kAugmentKeys[] = {
    {"augment.rotation_prob", &AugmentConfig::rotation_prob},
    {"augment.rotation_max_deg", &AugmentConfig::rotation_max_deg},
    {"augment.flip_prob", &AugmentConfig::flip_prob},
    {"augment.blur_prob", &AugmentConfig::blur_prob},
    {"augment.blur_sigma_min", &AugmentConfig::blur_sigma_min},
    {"augment.blur_sigma_max", &AugmentConfig::blur_sigma_max},
    {"augment.contrast_prob", &AugmentConfig::contrast_prob},
    {"augment.contrast_min", &AugmentConfig::contrast_min},
    {"augment.contrast_max", &AugmentConfig::contrast_max},
    {"augment.salt_pepper_prob", &AugmentConfig::salt_pepper_prob},
    {"augment.salt_pepper_amount", &AugmentConfig::salt_pepper_amount},
    {"augment.gaussian_prob", &AugmentConfig::gaussian_prob},
    {"augment.gaussian_sigma", &AugmentConfig::gaussian_sigma},
    {"augment.poisson_prob", &AugmentConfig::poisson_prob},
    {"augment.poisson_peak", &AugmentConfig::poisson_peak},
    {"augment.speckle_prob", &AugmentConfig::speckle_prob},
    {"augment.speckle_sigma", &AugmentConfig::speckle_sigma},
};

std::uint64_t read_count(const KeyValueConfig& kv, const char* key, std::uint64_t fallback) {
  const auto v = kv.get(key);
  if (!v) return fallback;
  const long long x = parse_int(key, *v);
  if (x < 0) throw ConfigError(std::string(key) + ": must be non-negative");
  return static_cast<std::uint64_t>(x);
}

}  // namespace

void validate_train_config(const TrainConfig& c) {
  validate_adam_config(c.adam);
  if (c.depth_batch < 1) throw ConfigError("train.depth_batch must be >= 1");
  if (c.semantic_batch < 1) throw ConfigError("train.semantic_batch must be >= 1");
  if (c.checkpoint_every < 1) throw ConfigError("train.checkpoint_every must be >= 1");
  if (!(c.l0_params.kappa > 1)) throw ConfigError("train.l0_kappa must be > 1");
  if (!(c.l0_params.lambda >= 0)) throw ConfigError("train.l0_lambda must be >= 0");
  validate_augment_config(c.augment_config);
}

std::set<std::string> train_config_keys() {
  std::set<std::string> keys = {"train.alpha",          "train.beta1",          "train.beta2",
                                "train.eps",            "train.weight_decay",   "train.depth_batch",
                                "train.semantic_batch", "train.iterations",     "train.seed",
                                "train.checkpoint_every", "train.l0",           "train.l0_lambda",
                                "train.l0_kappa",       "train.augment",        "train.bn_recalibrate"};
  for (const auto& k : kAugmentKeys) keys.insert(k.key);
  return keys;
}

TrainConfig read_train_config(const KeyValueConfig& kv) {
  TrainConfig c;
  const auto dbl = [&](const char* key, double& field) {
    if (auto v = kv.get(key)) field = parse_double(key, *v);
  };
  dbl("train.alpha", c.adam.alpha);
  dbl("train.beta1", c.adam.beta1);
  dbl("train.beta2", c.adam.beta2);
  dbl("train.eps", c.adam.eps);
  dbl("train.weight_decay", c.adam.weight_decay);
  c.depth_batch = read_count(kv, "train.depth_batch", c.depth_batch);
  c.semantic_batch = read_count(kv, "train.semantic_batch", c.semantic_batch);
  c.iterations = read_count(kv, "train.iterations", c.iterations);
  c.seed = read_count(kv, "train.seed", c.seed);
  c.checkpoint_every = read_count(kv, "train.checkpoint_every", c.checkpoint_every);
  if (auto v = kv.get("train.l0")) c.l0 = parse_bool("train.l0", *v);
  dbl("train.l0_lambda", c.l0_params.lambda);
  dbl("train.l0_kappa", c.l0_params.kappa);
  if (auto v = kv.get("train.augment")) c.augment = parse_bool("train.augment", *v);
  if (auto v = kv.get("train.bn_recalibrate")) c.bn_recalibrate = parse_bool("train.bn_recalibrate", *v);
  for (const auto& k : kAugmentKeys) dbl(k.key, c.augment_config.*k.field);
  validate_train_config(c);
  return c;
}

void write_train_config(const TrainConfig& c, KeyValueConfig& kv) {
  kv.set("train.alpha", format_double(c.adam.alpha));
  kv.set("train.beta1", format_double(c.adam.beta1));
  kv.set("train.beta2", format_double(c.adam.beta2));
  kv.set("train.eps", format_double(c.adam.eps));
  kv.set("train.weight_decay", format_double(c.adam.weight_decay));
  kv.set("train.depth_batch", std::to_string(c.depth_batch));
  kv.set("train.semantic_batch", std::to_string(c.semantic_batch));
  kv.set("train.iterations", std::to_string(c.iterations));
  kv.set("train.seed", std::to_string(c.seed));
  kv.set("train.checkpoint_every", std::to_string(c.checkpoint_every));
  kv.set("train.l0", c.l0 ? "true" : "false");
  kv.set("train.l0_lambda", format_double(c.l0_params.lambda));
  kv.set("train.l0_kappa", format_double(c.l0_params.kappa));
  kv.set("train.augment", c.augment ? "true" : "false");
  kv.set("train.bn_recalibrate", c.bn_recalibrate ? "true" : "false");
  for (const auto& k : kAugmentKeys) kv.set(k.key, format_double(c.augment_config.*k.field));
}

// ---------------------------------------------------------------------------

Schedule::Schedule(std::uint64_t seed, std::size_t n_depth, std::size_t depth_batch, std::size_t n_semantic,
                   std::size_t semantic_batch)
    : seed_(seed), n_depth_(n_depth), depth_batch_(depth_batch), n_semantic_(n_semantic), semantic_batch_(semantic_batch) {
  if (n_depth_ == 0) throw ConfigError("schedule: depth dataset is empty");
  if (depth_batch_ == 0 || (n_semantic_ > 0 && semantic_batch_ == 0)) throw ConfigError("schedule: batch sizes must be >= 1");
}

Origin Schedule::origin(std::uint64_t step) const {
  if (n_semantic_ == 0) return Origin::Depth;
  return step % 2 == 0 ? Origin::Depth : Origin::Semantic;
}

std::size_t Schedule::position(Origin o, std::uint64_t step) const {
  // Number of earlier batches drawn from the same dataset.
  const std::uint64_t k = n_semantic_ == 0 ? step : (o == Origin::Depth ? step / 2 : (step - 1) / 2);
  return static_cast<std::size_t>(k) * (o == Origin::Depth ? depth_batch_ : semantic_batch_);
}

const std::vector<std::size_t>& Schedule::permutation(Origin o, std::uint64_t epoch) const {
  const int which = o == Origin::Depth ? 0 : 1;
  auto it = cache_.find({which, epoch});
  if (it != cache_.end()) return it->second;
  if (cache_.size() > 64) cache_.clear();
  std::vector<std::size_t> perm(o == Origin::Depth ? n_depth_ : n_semantic_);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(derive_seed(seed_, {kShuffleStream, static_cast<std::uint64_t>(which), epoch}));
  // Fisher-Yates with our own generator so the order does not depend on the
  // standard library implementation.
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.integer(0, static_cast<long long>(i - 1)))]);
  return cache_.emplace(std::make_pair(which, epoch), std::move(perm)).first->second;
}

std::vector<std::size_t> Schedule::indices(std::uint64_t step) const {
  const Origin o = origin(step);
  const std::size_t n = o == Origin::Depth ? n_depth_ : n_semantic_;
  const std::size_t b = o == Origin::Depth ? depth_batch_ : semantic_batch_;
  const std::size_t start = position(o, step);
  std::vector<std::size_t> out;
  out.reserve(b);
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t pos = start + i;
    out.push_back(permutation(o, pos / n)[pos % n]);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void zero_all(Network& net) {
  for (Parameter* p : net.parameters()) p->zero_grad();
}

DepthBinning binning_of(const NetworkConfig& c) { return DepthBinning{c.depth_classes, c.depth_min, c.depth_max}; }

double checked(double loss, const char* what) {
  if (!std::isfinite(loss)) throw NumericError(std::string(what) + " loss is not finite");
  return loss;
}

}  // namespace

double conditional_step(Network& net, Adam& adam, const Batch& batch, std::uint64_t dropout_seed) {
  if (net.phase() != Phase::One) throw ContractError("conditional_step needs a phase-1 network");
  if (batch.origin == Origin::Both) throw ContractError("conditional_step: batch carries both ground truths");
  zero_all(net);
  Tape tape;
  ForwardOptions opt;
  opt.mode = Mode::Train;
  opt.seed = dropout_seed;
  opt.pad_input = true;
  double loss = 0;
  if (batch.origin == Origin::Depth) {
    opt.heads = HeadSet::Depth;
    const auto out = net.forward(tape, batch.images, opt);
    const Var l = softmax_cross_entropy(*out.depth_logits, depth_to_bins(*batch.depth, binning_of(net.config())));
    loss = checked(l.value()[0], "depth cross-entropy");
    tape.backward(l);
    adam.step({Branch::DSC, Branch::DC});
  } else {
    opt.heads = HeadSet::Semantic;
    const auto out = net.forward(tape, batch.images, opt);
    const Var l = softmax_cross_entropy(*out.semantic_logits, *batch.labels);
    loss = checked(l.value()[0], "semantic cross-entropy");
    tape.backward(l);
    adam.step({Branch::DSC, Branch::SC});
  }
  return loss;
}

namespace {

std::vector<std::uint8_t> depth_mask(const Tensor& depth, const DepthBinning& b) {
  std::vector<std::uint8_t> valid(depth.numel());
  for (std::size_t i = 0; i < depth.numel(); ++i) valid[i] = b.is_valid(depth[i]);
  return valid;
}

}  // namespace

double regression_step(Network& net, Adam& adam, const Batch& batch, std::uint64_t dropout_seed) {
  if (net.phase() != Phase::Two) throw ContractError("regression_step needs a phase-2 network");
  if (batch.origin != Origin::Depth) throw ContractError("regression_step needs a depth-origin batch");
  zero_all(net);
  Tape tape;
  ForwardOptions opt;
  opt.mode = Mode::Train;
  opt.seed = dropout_seed;
  opt.pad_input = true;
  const auto out = net.forward(tape, batch.images, opt);
  const auto valid = depth_mask(*batch.depth, binning_of(net.config()));
  const Var l = l1_loss(*out.depth, *batch.depth, valid);
  const double loss = checked(l.value()[0], "L1");
  tape.backward(l);
  adam.step({Branch::DSC, Branch::DC, Branch::REG});
  return loss;
}

void recalibrate_batch_norm(Network& net, const std::vector<Sample>& depth, const std::vector<Sample>& semantic,
                            const TrainConfig& cfg) {
  net.begin_batch_norm_recalibration();
  const auto sweep = [&](const std::vector<Sample>& pool, std::size_t batch, HeadSet heads) {
    for (std::size_t first = 0; first < pool.size(); first += batch) {
      std::vector<const Sample*> ptrs;
      for (std::size_t i = first; i < std::min(pool.size(), first + batch); ++i) ptrs.push_back(&pool[i]);
      Tape tape;
      ForwardOptions opt;
      opt.heads = heads;
      opt.pad_input = true;
      opt.recalibrate = true;
      net.forward(tape, make_batch(ptrs).images, opt);
    }
  };
  if (net.phase() == Phase::One) {
    sweep(depth, cfg.depth_batch, HeadSet::Depth);
    sweep(semantic, cfg.semantic_batch, HeadSet::Semantic);
  } else {
    sweep(depth, cfg.depth_batch, HeadSet::All);
  }
}

std::string loss_csv_header() { return "step,phase,origin,loss\n"; }

std::string loss_csv_row(const StepRecord& r) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%llu,%d,%s,%.9g\n", static_cast<unsigned long long>(r.step), r.phase,
                origin_name(r.origin), r.loss);
  return buf;
}

Sample preprocess(const Sample& sample, const TrainConfig& config) {
  if (!config.l0) return sample;
  Sample out = sample;
  out.rgb = l0_smooth(sample.rgb, config.l0_params);
  return out;
}

namespace {

std::vector<Sample> preprocess_all(const std::vector<Sample>& samples, const TrainConfig& config) {
  std::vector<Sample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(preprocess(s, config));
  return out;
}

void require_origin(const std::vector<Sample>& samples, Origin origin, const char* what) {
  for (const auto& s : samples) {
    if (s.origin != origin) {
      throw ConfigError(std::string(what) + " dataset contains " + origin_name(s.origin) + "-origin sample '" + s.id +
                        "'; expected only " + origin_name(origin) + "-origin samples");
    }
  }
}

Batch assemble(const std::vector<Sample>& pool, const std::vector<std::size_t>& idx, const TrainConfig& cfg,
               std::uint64_t step) {
  std::vector<Sample> augmented;
  std::vector<const Sample*> ptrs;
  if (cfg.augment) {
    augmented.reserve(idx.size());
    for (std::size_t slot = 0; slot < idx.size(); ++slot)
      augmented.push_back(augment(pool[idx[slot]], cfg.augment_config, derive_seed(cfg.seed, {kAugmentStream, step, slot})));
    for (const auto& s : augmented) ptrs.push_back(&s);
  } else {
    for (std::size_t i : idx) ptrs.push_back(&pool[i]);
  }
  return make_batch(ptrs);
}

std::string default_echo(const NetworkConfig& nc, const TrainConfig& tc) {
  KeyValueConfig kv;
  write_network_config(nc, kv);
  write_train_config(tc, kv);
  return kv.str();
}

Checkpoint snapshot(const Network& net, const Adam& adam, std::uint64_t iteration, const std::string& echo) {
  Checkpoint c;
  c.phase = static_cast<std::uint32_t>(net.phase());
  c.iteration = iteration;
  c.config = echo;
  c.tensors = net.state();
  c.optimizer = adam.export_state();
  return c;
}

template <class StepFn>
TrainResult run_loop(Network& net, Adam& adam, const Schedule& schedule, const std::vector<Sample>& depth,
                     const std::vector<Sample>& semantic, const TrainConfig& cfg, const TrainOptions& options,
                     std::uint64_t start, const std::string& echo, StepFn&& step_fn) {
  TrainResult result;
  const int phase = static_cast<int>(net.phase());
  for (std::uint64_t step = start; step < cfg.iterations; ++step) {
    const Origin origin = schedule.origin(step);
    const auto& pool = origin == Origin::Depth ? depth : semantic;
    const Batch batch = assemble(pool, schedule.indices(step), cfg, step);
    const double loss = step_fn(batch, derive_seed(cfg.seed, {kDropoutStream, step}));
    const StepRecord rec{step + 1, phase, origin, loss};
    result.log.push_back(rec);
    const bool keep_going = !options.hooks.on_step || options.hooks.on_step(rec);
    if ((step + 1) % cfg.checkpoint_every == 0 && options.hooks.on_checkpoint && step + 1 < cfg.iterations && keep_going) {
      options.hooks.on_checkpoint(snapshot(net, adam, step + 1, echo), false);
    }
    if (!keep_going) {
      result.stopped_early = true;
      break;
    }
  }
  const std::uint64_t done = result.log.empty() ? start : result.log.back().step;
  if (cfg.bn_recalibrate && !result.log.empty()) recalibrate_batch_norm(net, depth, semantic, cfg);
  result.checkpoint = snapshot(net, adam, done, echo);
  if (options.hooks.on_checkpoint) options.hooks.on_checkpoint(result.checkpoint, true);
  return result;
}

void check_resume(const Checkpoint& ckpt, Phase phase, const TrainConfig& cfg) {
  if (ckpt.phase != static_cast<std::uint32_t>(phase)) {
    throw CheckpointError("cannot resume phase " + std::to_string(static_cast<int>(phase)) + " from a phase-" +
                          std::to_string(ckpt.phase) + " checkpoint");
  }
  if (ckpt.iteration > cfg.iterations) {
    throw ConfigError("checkpoint is at step " + std::to_string(ckpt.iteration) + ", beyond train.iterations = " +
                      std::to_string(cfg.iterations));
  }
}

}  // namespace

Network network_from_checkpoint(const NetworkConfig& net_config, const Checkpoint& ckpt) {
  if (ckpt.phase != 1 && ckpt.phase != 2) throw CheckpointFormatError("checkpoint phase must be 1 or 2");
  Network net = build_network(net_config, static_cast<Phase>(ckpt.phase), 0);
  net.load_state(ckpt.tensors);
  return net;
}

TrainResult train_phase1(const NetworkConfig& net_config, const TrainConfig& cfg, const std::vector<Sample>& depth,
                         const std::vector<Sample>& semantic, const TrainOptions& options) {
  validate_config(net_config);
  validate_train_config(cfg);
  if (depth.empty()) throw ConfigError("phase 1 needs a non-empty depth dataset");
  if (options.depth_only) {
    if (!semantic.empty()) throw ConfigError("depth-only phase 1 must not be given semantic samples");
  } else if (semantic.empty()) {
    throw ConfigError("phase 1 needs a non-empty semantic dataset");
  }
  require_origin(depth, Origin::Depth, "depth");
  require_origin(semantic, Origin::Semantic, "semantic");

  Network net = build_phase1(net_config, derive_seed(cfg.seed, {kInitStream}));
  Adam adam(net.parameters(), cfg.adam);
  std::uint64_t start = 0;
  if (options.resume) {
    check_resume(*options.resume, Phase::One, cfg);
    net.load_state(options.resume->tensors);
    adam.import_state(options.resume->optimizer);
    start = options.resume->iteration;
  }
  const auto d = preprocess_all(depth, cfg), s = preprocess_all(semantic, cfg);
  const Schedule schedule(cfg.seed, d.size(), cfg.depth_batch, s.size(), cfg.semantic_batch);
  const std::string echo = options.config_echo.empty() ? default_echo(net_config, cfg) : options.config_echo;
  return run_loop(net, adam, schedule, d, s, cfg, options, start, echo,
                  [&](const Batch& b, std::uint64_t seed) { return conditional_step(net, adam, b, seed); });
}

TrainResult train_phase2(const NetworkConfig& net_config, const TrainConfig& cfg, const std::vector<Sample>& depth,
                         const Checkpoint& phase1, const TrainOptions& options) {
  validate_config(net_config);
  validate_train_config(cfg);
  if (depth.empty()) throw ConfigError("phase 2 needs a non-empty depth dataset");
  require_origin(depth, Origin::Depth, "depth");

  std::optional<Network> net;
  std::uint64_t start = 0;
  if (options.resume) {
    check_resume(*options.resume, Phase::Two, cfg);
    net.emplace(build_network(net_config, Phase::Two, derive_seed(cfg.seed, {kInitStream})));
    net->load_state(options.resume->tensors);
    start = options.resume->iteration;
  } else {
    net.emplace(build_phase2(net_config, phase1, derive_seed(cfg.seed, {kInitStream})));
  }
  Adam adam(net->parameters(), cfg.adam);
  if (options.resume) adam.import_state(options.resume->optimizer);
  const auto d = preprocess_all(depth, cfg);
  const Schedule schedule(cfg.seed, d.size(), cfg.depth_batch, 0, 1);
  const std::string echo = options.config_echo.empty() ? default_echo(net_config, cfg) : options.config_echo;
  return run_loop(*net, adam, schedule, d, {}, cfg, options, start, echo,
                  [&](const Batch& b, std::uint64_t seed) { return regression_step(*net, adam, b, seed); });
}

// ---------------------------------------------------------------------------

namespace {

template <class Fn>
void for_each_batch(const std::vector<Sample>& samples, std::size_t batch_size, Fn&& fn) {
  if (batch_size == 0) batch_size = 1;
  for (std::size_t i = 0; i < samples.size(); i += batch_size) {
    std::vector<const Sample*> ptrs;
    for (std::size_t j = i; j < std::min(samples.size(), i + batch_size); ++j) ptrs.push_back(&samples[j]);
    fn(make_batch(ptrs));
  }
}

}  // namespace

ClassificationScore depth_classification_score(const Network& net, const std::vector<Sample>& samples, std::size_t batch_size) {
  if (net.phase() != Phase::One) throw ContractError("depth_classification_score needs a phase-1 network");
  const DepthBinning bins = binning_of(net.config());
  double ce_sum = 0;
  std::size_t correct = 0, total = 0;
  for_each_batch(samples, batch_size, [&](const Batch& b) {
    if (!b.depth) throw ContractError("depth_classification_score needs depth ground truth");
    Tape tape;
    ForwardOptions opt;
    opt.heads = HeadSet::Depth;
    opt.pad_input = true;
    const auto out = net.forward(tape, b.images, opt);
    const IndexMap target = depth_to_bins(*b.depth, bins);
    const Tensor& logits = out.depth_logits->value();
    const std::size_t N = logits.dim(0), K = logits.dim(1), P = logits.dim(2) * logits.dim(3);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t p = 0; p < P; ++p) {
        if (!target.valid[n * P + p]) continue;
        double mx = -INFINITY;
        std::size_t arg = 0;
        for (std::size_t k = 0; k < K; ++k) {
          const double z = logits[(n * K + k) * P + p];
          if (z > mx) mx = z, arg = k;
        }
        double se = 0;
        for (std::size_t k = 0; k < K; ++k) se += std::exp(logits[(n * K + k) * P + p] - mx);
        const auto t = static_cast<std::size_t>(target.index[n * P + p]);
        ce_sum += std::log(se) - (logits[(n * K + t) * P + p] - mx);
        correct += arg == t;
        ++total;
      }
  });
  if (total == 0) throw EmptyBatchError("depth_classification_score: no valid pixels");
  return {ce_sum / static_cast<double>(total), static_cast<double>(correct) / static_cast<double>(total), total};
}

Tensor predict_depth(const Network& net, const Tensor& images) {
  Tape tape;
  ForwardOptions opt;
  opt.pad_input = true;
  if (net.phase() == Phase::Two) return net.forward(tape, images, opt).depth->value();
  opt.heads = HeadSet::Depth;
  const auto out = net.forward(tape, images, opt);
  const auto centers = binning_of(net.config()).centers();
  return softmax_expectation(*out.depth_logits, centers).value();
}

double mean_absolute_error(const Network& net, const std::vector<Sample>& samples, std::size_t batch_size) {
  const DepthBinning bins = binning_of(net.config());
  double sum = 0;
  std::size_t n = 0;
  for_each_batch(samples, batch_size, [&](const Batch& b) {
    if (!b.depth) throw ContractError("mean_absolute_error needs depth ground truth");
    const Tensor pred = predict_depth(net, b.images);
    for (std::size_t i = 0; i < pred.numel(); ++i) {
      const double g = (*b.depth)[i];
      if (!bins.is_valid(g)) continue;
      sum += std::abs(static_cast<double>(pred[i]) - g);
      ++n;
    }
  });
  if (n == 0) throw EmptyBatchError("mean_absolute_error: no valid pixels");
  return sum / static_cast<double>(n);
}

CFDEPTH_END_NAMESPACE
