#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cfdepth/autodiff.hpp"
#include "cfdepth/train/checkpoint.hpp"

CFDEPTH_BEGIN_NAMESPACE

struct AdamConfig {
  double alpha = 0.001;
  /// Also the "momentum" of the original description.
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Classic L2 decay: weight_decay * param is added to the gradient.
  double weight_decay = 0.0003;
};

/// Throws ConfigError when alpha <= 0, a beta is outside [0, 1), eps <= 0 or
/// weight_decay < 0.
void validate_adam_config(const AdamConfig& config);

struct AdamState {
  Tensor m;
  Tensor v;
  std::uint64_t t = 0;
};

/// One bias-corrected ADAM step on `value` with gradient `grad`. Throws
/// NumericError naming `name` if the gradient is not finite, DimensionError
/// if shapes disagree.
void adam_update(Tensor& value, const Tensor& grad, AdamState& state, const AdamConfig& config, const std::string& name);

/// ADAM over a fixed parameter set. State for every parameter exists from
/// construction, so inactive parameters keep zero moments and t = 0 until
/// their first update.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig config);

  /// Update every parameter whose branch is in `active` from its grad().
  void step(const std::set<Branch>& active);

  const AdamConfig& config() const noexcept { return config_; }
  const AdamState& state(const std::string& name) const;
  const std::map<std::string, AdamState>& states() const noexcept { return states_; }

  /// Sorted by parameter name.
  std::vector<OptimizerEntry> export_state() const;
  /// Every parameter must be present with matching shapes; throws CheckpointError otherwise.
  void import_state(const std::vector<OptimizerEntry>& entries);

 private:
  std::vector<Parameter*> params_;
  AdamConfig config_;
  std::map<std::string, AdamState> states_;
};

CFDEPTH_END_NAMESPACE
