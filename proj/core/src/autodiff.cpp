#include "sfde/autodiff.hpp"

#include <cassert>

namespace sfde {

const char* to_string(FormatErrorCode code) noexcept {
  switch (code) {
    case FormatErrorCode::MagicMismatch: return "magic-mismatch";
    case FormatErrorCode::VersionMismatch: return "version-mismatch";
    case FormatErrorCode::Truncated: return "truncated";
    case FormatErrorCode::NonUnitVector: return "non-unit-vector";
    case FormatErrorCode::InvalidField: return "invalid-field";
  }
  return "unknown";
}

int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Shape:
    case ErrorKind::Config:
    case ErrorKind::Validation: return 1;
    case ErrorKind::Numeric: return 2;
    case ErrorKind::Io:
    case ErrorKind::Format: return 3;
  }
  return 1;
}

template <typename T>
Parameter<T>& ParameterStore<T>::add(std::string name, Tensor<T> value, ParamRole role) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  auto p = std::make_unique<Parameter<T>>();
  p->name = name;
  p->grad = Tensor<T>::zeros_like(value);
  p->value = std::move(value);
  p->role = role;
  index_.emplace(std::move(name), params_.size());
  params_.push_back(std::move(p));
  return *params_.back();
}

template <typename T>
Parameter<T>& ParameterStore<T>::get(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  return *params_[it->second];
}

template <typename T>
const Parameter<T>& ParameterStore<T>::get(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ConfigError("unknown parameter '" + std::string(name) + "'");
  return *params_[it->second];
}

template <typename T>
bool ParameterStore<T>::contains(std::string_view name) const {
  return index_.count(std::string(name)) != 0;
}

template <typename T>
void ParameterStore<T>::zero_grads() {
  for (auto& p : params_) p->zero_grad();
}

template <typename T>
std::size_t ParameterStore<T>::trainable_scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p->trainable()) n += p->value.size();
  }
  return n;
}

template <typename T>
Var<T> Tape<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::variable(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::parameter(Parameter<T>& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var<T>(this, it->second);
  Node n;
  n.value = p.value;
  n.requires_grad = p.trainable();
  n.parameter = &p;
  Var<T> v = push(std::move(n));
  param_nodes_.emplace(&p, v.id());
  return v;
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, bool requires_grad, BackwardFn backward) {
#ifndef NDEBUG
  assert(value.all_finite() && "kernel produced a non-finite value");
#endif
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

template <typename T>
bool Tape<T>::any_requires_grad(std::initializer_list<Var<T>> vars) const {
  for (const auto& v : vars) {
    if (v.valid() && nodes_[v.id()].requires_grad) return true;
  }
  return false;
}

template <typename T>
Tensor<T> Tape<T>::grad(Var<T> v) const {
  const Node& n = nodes_[v.id()];
  if (!n.has_grad) return Tensor<T>::zeros_like(n.value);
  return n.grad;
}

template <typename T>
Tensor<T>& Tape<T>::grad_slot(Var<T> v) {
  Node& n = nodes_[v.id()];
  if (!n.has_grad) {
    n.grad = Tensor<T>::zeros_like(n.value);
    n.has_grad = true;
  }
  return n.grad;
}

template <typename T>
void Tape<T>::accumulate(Var<T> v, const Tensor<T>& g) {
  if (!nodes_[v.id()].requires_grad) return;
  grad_slot(v) += g;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (consumed_) throw ValidationError("backward() already ran on this tape; record a new one");
  if (loss.tape_ != this) throw ValidationError("loss does not belong to this tape");
  if (value(loss).size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + to_string(value(loss).shape()));
  }
  consumed_ = true;
  trace_.clear();
  grad_slot(loss).fill(T(1));
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.requires_grad) continue;
    trace_.push_back(i);
    if (n.backward) n.backward(*this, n.grad);
  }
  for (auto& n : nodes_) {
    if (n.parameter && n.has_grad && n.requires_grad) n.parameter->grad += n.grad;
  }
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace sfde
