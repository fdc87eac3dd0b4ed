#include "cfdepth/autodiff.hpp"

#include "cfdepth/errors.hpp"

CFDEPTH_BEGIN_NAMESPACE

std::string_view branch_name(Branch b) {
  switch (b) {
    case Branch::DSC: return "DSC";
    case Branch::DC: return "DC";
    case Branch::SC: return "SC";
    case Branch::REG: return "REG";
  }
  return "?";
}

Branch parse_branch(std::string_view name) {
  if (name == "DSC") return Branch::DSC;
  if (name == "DC") return Branch::DC;
  if (name == "SC") return Branch::SC;
  if (name == "REG") return Branch::REG;
  throw ParameterError("unknown branch tag '" + std::string(name) + "'");
}

Parameter::Parameter(std::string name, Tensor value, Branch branch)
    : name_(std::move(name)), branch_(branch), value_(std::move(value)), grad_(value_.shape()) {}

void Parameter::zero_grad() { grad_.fill(Real(0)); }

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::variable(Tensor value) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::parameter(Parameter& p) {
  Node node;
  node.value = p.value();
  node.requires_grad = true;
  node.param = &p;
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Tensor value, std::vector<int> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  for (int id : inputs) node.requires_grad = node.requires_grad || requires_grad(id);
  node.inputs = std::move(inputs);
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(int id, const Tensor& g) {
  Node& node = nodes_[static_cast<std::size_t>(id)];
  if (!node.requires_grad) return;
  if (g.shape() != node.value.shape()) {
    throw DimensionError("gradient shape " + shape_str(g.shape()) + " does not match value shape " +
                         shape_str(node.value.shape()));
  }
  if (!node.has_grad) {
    node.grad = g;
    node.has_grad = true;
    return;
  }
  Real* dst = node.grad.ptr();
  const Real* src = g.ptr();
  for (std::size_t i = 0, n = g.numel(); i < n; ++i) dst[i] += src[i];
}

Tensor Tape::grad(Var v) const {
  const Node& node = nodes_[static_cast<std::size_t>(v.id)];
  return node.has_grad ? node.grad : Tensor(node.value.shape());
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("backward: loss belongs to a different tape");
  if (value(loss.id).numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_str(value(loss.id).shape()));
  }
  for (auto& node : nodes_) {
    node.has_grad = false;
    node.grad = Tensor();
  }
  order_.clear();
  Node& root = nodes_[static_cast<std::size_t>(loss.id)];
  if (!root.requires_grad) return;
  root.grad = Tensor(root.value.shape(), Real(1));
  root.has_grad = true;

  for (int id = loss.id; id >= 0; --id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.has_grad) continue;
    if (node.param != nullptr) {
      Tensor& pg = node.param->grad();
      const Real* src = node.grad.ptr();
      Real* dst = pg.ptr();
      for (std::size_t i = 0, n = pg.numel(); i < n; ++i) dst[i] += src[i];
    }
    if (node.backward) {
      order_.push_back(id);
      // Inputs always precede their consumer, so the rule never touches this slot.
      Tensor grad_out = std::move(node.grad);
      node.backward(*this, grad_out);
      node.grad = std::move(grad_out);
    }
  }
}

CFDEPTH_END_NAMESPACE
