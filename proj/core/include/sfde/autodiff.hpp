#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sfde/tensor.hpp"

namespace sfde {

enum class ParamRole {
  Weight,  // trainable, decoupled weight decay applies
  Bias,    // trainable, no weight decay (biases, norm affine, scalars)
  Buffer,  // not trainable (running statistics)
};

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  ParamRole role = ParamRole::Weight;

  bool trainable() const noexcept { return role != ParamRole::Buffer; }
  bool decays() const noexcept { return role == ParamRole::Weight; }
  void zero_grad() { grad.fill(T(0)); }
};

/// Owns every learnable value and buffer of a model. Addresses are stable for
/// the store's lifetime, so modules keep raw pointers into it.
template <typename T>
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Parameter<T>& add(std::string name, Tensor<T> value, ParamRole role);

  Parameter<T>& get(std::string_view name);
  const Parameter<T>& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const noexcept { return params_.size(); }
  Parameter<T>& at(std::size_t i) { return *params_[i]; }
  const Parameter<T>& at(std::size_t i) const { return *params_[i]; }

  void zero_grads();
  std::size_t trainable_scalar_count() const;

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename T>
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode record of executed operations. Single owner, single use:
/// backward() may run once per tape.
template <typename T>
class Tape {
 public:
  /// Receives the gradient flowing into the node and pushes contributions to
  /// the node's inputs through accumulate().
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  /// Leaf whose gradient is kept on the tape (read back with grad()).
  Var<T> variable(Tensor<T> value);
  /// Leaf bound to a parameter; backward() adds its gradient to p.grad.
  /// Registering the same parameter twice returns the same node.
  Var<T> parameter(Parameter<T>& p);

  Var<T> record(Tensor<T> value, bool requires_grad, BackwardFn backward);

  bool requires_grad(Var<T> v) const { return nodes_[v.id()].requires_grad; }
  bool any_requires_grad(std::initializer_list<Var<T>> vars) const;
  const Tensor<T>& value(Var<T> v) const { return nodes_[v.id()].value; }

  /// Gradient of the last backward() at v; zeros when v was off the loss path.
  Tensor<T> grad(Var<T> v) const;

  /// Adds g into v's gradient slot (allocated on first use). No-op for nodes
  /// that do not require a gradient.
  void accumulate(Var<T> v, const Tensor<T>& g);
  /// Direct access to the gradient slot, allocating zeros if needed.
  Tensor<T>& grad_slot(Var<T> v);

  void backward(Var<T> loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }
  /// Node ids in the order backward() visited them.
  const std::vector<std::size_t>& backward_trace() const noexcept { return trace_; }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter<T>* parameter = nullptr;
  };

  Var<T> push(Node node);

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
  std::vector<std::size_t> trace_;
  bool consumed_ = false;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(*this);
}

}  // namespace sfde
