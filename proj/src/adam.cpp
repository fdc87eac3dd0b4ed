#include "cfdepth/train/adam.hpp"

#include <cmath>

#include "cfdepth/errors.hpp"

CFDEPTH_BEGIN_NAMESPACE

void validate_adam_config(const AdamConfig& c) {
  if (!(c.alpha > 0)) throw ConfigError("train.alpha must be > 0");
  if (!(c.beta1 >= 0 && c.beta1 < 1)) throw ConfigError("train.beta1 must lie in [0, 1)");
  if (!(c.beta2 >= 0 && c.beta2 < 1)) throw ConfigError("train.beta2 must lie in [0, 1)");
  if (!(c.eps > 0)) throw ConfigError("train.eps must be > 0");
  if (!(c.weight_decay >= 0)) throw ConfigError("train.weight_decay must be >= 0");
}

void adam_update(Tensor& value, const Tensor& grad, AdamState& s, const AdamConfig& c, const std::string& name) {
  if (grad.shape() != value.shape()) {
    throw DimensionError("adam_update: gradient of '" + name + "' has shape " + shape_str(grad.shape()) +
                         ", parameter has " + shape_str(value.shape()));
  }
  if (s.m.shape() != value.shape()) s.m = Tensor(value.shape());
  if (s.v.shape() != value.shape()) s.v = Tensor(value.shape());
  if (!grad.all_finite()) throw NumericError("non-finite gradient for parameter '" + name + "'");

  const std::uint64_t t = s.t + 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < value.numel(); ++i) {
    const double g = static_cast<double>(grad[i]) + c.weight_decay * static_cast<double>(value[i]);
    const double m = c.beta1 * s.m[i] + (1.0 - c.beta1) * g;
    const double v = c.beta2 * s.v[i] + (1.0 - c.beta2) * g * g;
    s.m[i] = static_cast<Real>(m);
    s.v[i] = static_cast<Real>(v);
    const double step = c.alpha * (m / bc1) / (std::sqrt(v / bc2) + c.eps);
    value[i] = static_cast<Real>(static_cast<double>(value[i]) - step);
  }
  s.t = t;
  if (!value.all_finite()) throw NumericError("parameter '" + name + "' diverged to a non-finite value");
}

Adam::Adam(std::vector<Parameter*> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  validate_adam_config(config_);
  for (Parameter* p : params_) {
    auto [it, fresh] = states_.try_emplace(p->name());
    if (!fresh) throw ContractError("Adam: duplicate parameter name '" + p->name() + "'");
    it->second.m = Tensor(p->value().shape());
    it->second.v = Tensor(p->value().shape());
  }
}

void Adam::step(const std::set<Branch>& active) {
  for (Parameter* p : params_) {
    if (!active.count(p->branch())) continue;
    AdamState& s = states_.at(p->name());
    if (p->grad().shape() != p->value().shape()) p->zero_grad();
    adam_update(p->value(), p->grad(), s, config_, p->name());
  }
}

const AdamState& Adam::state(const std::string& name) const {
  const auto it = states_.find(name);
  if (it == states_.end()) throw ContractError("Adam: no state for parameter '" + name + "'");
  return it->second;
}

std::vector<OptimizerEntry> Adam::export_state() const {
  std::vector<OptimizerEntry> out;
  for (const auto& [name, s] : states_) out.push_back({name, s.t, s.m, s.v});
  return out;
}

void Adam::import_state(const std::vector<OptimizerEntry>& entries) {
  std::map<std::string, const OptimizerEntry*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;
  for (Parameter* p : params_) {
    const auto it = by_name.find(p->name());
    if (it == by_name.end()) throw CheckpointError("checkpoint has no optimizer state for '" + p->name() + "'");
    const OptimizerEntry& e = *it->second;
    if (e.m.shape() != p->value().shape() || e.v.shape() != p->value().shape()) {
      throw CheckpointError("optimizer state for '" + p->name() + "' does not match the parameter shape");
    }
    states_[p->name()] = AdamState{e.m, e.v, e.step};
  }
}

CFDEPTH_END_NAMESPACE
