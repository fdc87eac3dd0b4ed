#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "cfdepth/tensor.hpp"

CFDEPTH_BEGIN_NAMESPACE

/// Sub-network that owns a parameter. Used as the routing key of conditional flow.
enum class Branch : std::uint8_t { DSC, DC, SC, REG };

std::string_view branch_name(Branch b);
Branch parse_branch(std::string_view name);

/// Trainable tensor with a gradient slot and an immutable branch tag.
class Parameter {
 public:
  Parameter(std::string name, Tensor value, Branch branch);

  const std::string& name() const noexcept { return name_; }
  Branch branch() const noexcept { return branch_; }

  Tensor& value() noexcept { return value_; }
  const Tensor& value() const noexcept { return value_; }
  Tensor& grad() noexcept { return grad_; }
  const Tensor& grad() const noexcept { return grad_; }

  void zero_grad();

 private:
  std::string name_;
  Branch branch_;
  Tensor value_;
  Tensor grad_;
};

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Linear record of executed operations for reverse-mode differentiation.
///
/// Nodes are appended in execution order; backward() walks them in exact
/// reverse. A tape is owned by one thread and is not reusable across steps.
class Tape {
 public:
  /// Receives the gradient of the node's output and pushes contributions to
  /// its inputs through Tape::accumulate.
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Input that does not receive gradients.
  Var constant(Tensor value);
  /// Leaf whose gradient is kept on the tape (see grad()).
  Var variable(Tensor value);
  /// Leaf bound to a Parameter; backward() adds into Parameter::grad().
  Var parameter(Parameter& p);

  /// Append an operation result. `inputs` lists the tape ids the value depends on.
  Var record(Tensor value, std::vector<int> inputs, BackwardFn backward);

  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  bool requires_grad(Var v) const { return requires_grad(v.id); }

  /// Add `g` into the gradient slot of node `id` (no-op if it does not require grad).
  void accumulate(int id, const Tensor& g);

  /// Gradient of the last backward() w.r.t. a node; zeros if it received none.
  Tensor grad(Var v) const;

  /// Reverse sweep from a scalar loss.
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  /// Node ids whose backward rule ran in the last sweep, in visiting order.
  const std::vector<int>& last_backward_order() const noexcept { return order_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<int> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  std::deque<Node> nodes_;  // stable references across record()
  std::vector<int> order_;
};

CFDEPTH_END_NAMESPACE
