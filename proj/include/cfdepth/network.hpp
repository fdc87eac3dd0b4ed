#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "cfdepth/autodiff.hpp"
#include "cfdepth/kvconfig.hpp"
#include "cfdepth/ops.hpp"
#include "cfdepth/train/checkpoint.hpp"

CFDEPTH_BEGIN_NAMESPACE

enum class Phase : std::uint32_t { One = 1, Two = 2 };

/// Chain of `sets` Conv -> BN -> Dropout -> ReLU units, optionally followed by 2x2 average pooling.
struct ConvBlockSpec {
  int sets = 2;
  bool pool = true;
  friend bool operator==(const ConvBlockSpec&, const ConvBlockSpec&) = default;
};

/// 2x upsampling deconvolution whose output is concatenated with skip features.
/// `skip` is "auto" (resolve by spatial size), "none", or a layer name such as "dsc.blk2".
struct DeconvBlockSpec {
  std::string skip = "auto";
  friend bool operator==(const DeconvBlockSpec&, const DeconvBlockSpec&) = default;
};

/// Conv blocks run first, then deconv blocks.
struct SubNetSpec {
  std::vector<ConvBlockSpec> conv;
  std::vector<DeconvBlockSpec> deconv;
  friend bool operator==(const SubNetSpec&, const SubNetSpec&) = default;
};

struct NetworkConfig {
  std::string preset = "custom";
  SubNetSpec dsc, dc, sc, reg;
  std::size_t height = 32;
  std::size_t width = 64;
  int depth_classes = 24;
  int semantic_classes = 19;
  double depth_min = 1.0;
  double depth_max = 80.0;
  /// Multiplies every channel width.
  double scale = 1.0;
  /// Width at full resolution; doubles per pooling level up to max_width.
  int base_width = 32;
  int max_width = 512;
  double dropout = 0.25;

  int channels_at(int level) const;
  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

/// "paper-scale" or "tiny"; throws ConfigError otherwise.
NetworkConfig preset_config(std::string_view name);

/// Every violated constraint, empty when the config is usable for both phases.
std::vector<std::string> config_violations(const NetworkConfig& config);
/// Throws ConfigError listing every violation.
void validate_config(const NetworkConfig& config);

/// Keys under "network." understood by read_network_config.
std::set<std::string> network_config_keys();
/// Start from `network.preset` (default "tiny") and apply overrides.
NetworkConfig read_network_config(const KeyValueConfig& kv);
void write_network_config(const NetworkConfig& config, KeyValueConfig& kv);

struct BlockCensus {
  int conv_blocks = 0;
  int deconv_blocks = 0;
  std::map<Branch, std::pair<int, int>> per_branch;
};

enum class HeadSet { All, Depth, Semantic };

struct ForwardOptions {
  Mode mode = Mode::Eval;
  /// Root of the dropout masks for this pass.
  std::uint64_t seed = 0;
  /// Phase-1 only: restrict the pass to one branch (conditional flow).
  HeadSet heads = HeadSet::All;
  /// Zero-pad H and W up to multiples of 2^pool_depth() and crop the outputs
  /// back. Without it a non-divisible input is a DimensionError.
  bool pad_input = false;
  /// Statistics pass: batch norm normalizes with batch statistics and folds
  /// them into a running average weighted by batch size over every pass since
  /// begin_batch_norm_recalibration(); dropout is off. Nothing is trained.
  bool recalibrate = false;
};

struct NetworkOutputs {
  std::optional<Var> depth_logits;     // phase 1: N x depth_classes x H x W
  std::optional<Var> semantic_logits;  // phase 1: N x semantic_classes x H x W
  std::optional<Var> depth;            // phase 2: N x 1 x H x W, meters
};

/// Names of checkpoint entries that a load did not consume.
struct LoadReport {
  std::vector<std::string> unused;
};

class Network {
 public:
  Network(Network&&) noexcept;
  Network& operator=(Network&&) noexcept;
  ~Network();

  Phase phase() const noexcept;
  const NetworkConfig& config() const noexcept;

  /// Trainable parameters in construction order.
  std::vector<Parameter*> parameters() const;
  Parameter* find_parameter(std::string_view name) const;

  /// Parameters followed by batch-norm running statistics.
  std::vector<NamedTensor> state() const;
  /// Copy matching entries from `tensors`. Every network tensor must be present
  /// with the right shape unless its branch is listed in `optional_branches`.
  LoadReport load_state(const std::vector<NamedTensor>& tensors, const std::set<Branch>& optional_branches = {});

  BlockCensus census() const;
  /// Number of 2x2 pooling levels below input resolution.
  int pool_depth() const noexcept;

  /// Restart the sample count used by ForwardOptions::recalibrate.
  void begin_batch_norm_recalibration();

  /// Images are N x 3 x H x W in [0, 1].
  NetworkOutputs forward(Tape& tape, const Tensor& images, const ForwardOptions& options) const;

  struct Impl;

 private:
  explicit Network(std::unique_ptr<Impl> impl);
  friend Network build_phase1(const NetworkConfig&, std::uint64_t);
  friend Network build_phase2(const NetworkConfig&, const Checkpoint&, std::uint64_t, LoadReport*);
  friend Network build_network(const NetworkConfig&, Phase, std::uint64_t);

  std::unique_ptr<Impl> impl_;
};

/// DSC + DC + SC, He-initialized from `seed`.
Network build_phase1(const NetworkConfig& config, std::uint64_t seed);

/// DSC + DC loaded from a phase-1 (or phase-2) checkpoint plus a freshly
/// initialized REG sub-net. SC entries of the checkpoint are reported unused.
Network build_phase2(const NetworkConfig& config, const Checkpoint& checkpoint, std::uint64_t seed,
                     LoadReport* report = nullptr);

/// Freshly initialized network of either phase (phase 2 without pretraining).
Network build_network(const NetworkConfig& config, Phase phase, std::uint64_t seed);

CFDEPTH_END_NAMESPACE
