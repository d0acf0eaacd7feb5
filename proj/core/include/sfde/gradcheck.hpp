#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sfde/autodiff.hpp"
#include "sfde/random.hpp"

// Central finite-difference comparison against taped gradients.
namespace sfde::gradcheck {

struct Comparison {
  std::string name;
  std::size_t probed = 0;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
  double difference_norm = 0.0;

  /// ||a - n|| / max(||a||, ||n||); 0 when both vanish below `floor`.
  double relative_error(double floor = 1e-9) const {
    const double scale = std::max(analytic_norm, numeric_norm);
    return scale < floor ? 0.0 : difference_norm / scale;
  }
};

struct Options {
  double step = 1e-5;
  /// Entries probed per tensor; larger tensors are sampled without replacement.
  std::size_t max_entries = 0;
  std::uint64_t seed = 1;
};

namespace detail {
inline std::vector<std::size_t> probe_indices(std::size_t n, std::size_t max_entries, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (max_entries == 0 || max_entries >= n) return idx;
  for (std::size_t i = 0; i < max_entries; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(max_entries);
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline Comparison compare(std::string name, const std::vector<double>& a, const std::vector<double>& n) {
  Comparison c{std::move(name), a.size(), 0, 0, 0};
  for (std::size_t i = 0; i < a.size(); ++i) {
    c.analytic_norm += a[i] * a[i];
    c.numeric_norm += n[i] * n[i];
    c.difference_norm += (a[i] - n[i]) * (a[i] - n[i]);
  }
  c.analytic_norm = std::sqrt(c.analytic_norm);
  c.numeric_norm = std::sqrt(c.numeric_norm);
  c.difference_norm = std::sqrt(c.difference_norm);
  return c;
}
}  // namespace detail

/// `loss` builds a scalar on the given tape from variables bound to `inputs`.
/// It must be a deterministic function of the input values.
using InputLoss = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

inline std::vector<Comparison> check_inputs(std::vector<Tensor<double>> inputs, const InputLoss& loss,
                                            const Options& options = {}) {
  auto evaluate = [&](bool with_grad, std::vector<Tensor<double>>* grads) {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& t : inputs) vars.push_back(tape.variable(t));
    Var<double> out = loss(tape, vars);
    const double value = out.value()[0];
    if (with_grad) {
      tape.backward(out);
      for (auto v : vars) grads->push_back(tape.grad(v));
    }
    return value;
  };
  std::vector<Tensor<double>> grads;
  evaluate(true, &grads);
  Rng rng(options.seed);
  std::vector<Comparison> out;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<double> a, n;
    for (std::size_t j : detail::probe_indices(inputs[k].size(), options.max_entries, rng)) {
      const double saved = inputs[k][j];
      inputs[k][j] = saved + options.step;
      const double up = evaluate(false, nullptr);
      inputs[k][j] = saved - options.step;
      const double down = evaluate(false, nullptr);
      inputs[k][j] = saved;
      a.push_back(grads[k][j]);
      n.push_back((up - down) / (2.0 * options.step));
    }
    out.push_back(detail::compare("input " + std::to_string(k), a, n));
  }
  return out;
}

/// `loss` builds a scalar on a fresh tape, binding parameters of `store`.
using StoreLoss = std::function<Var<double>(Tape<double>&)>;

inline std::vector<Comparison> check_parameters(ParameterStore<double>& store, const StoreLoss& loss,
                                                const Options& options = {}) {
  store.zero_grads();
  {
    Tape<double> tape;
    tape.backward(loss(tape));
  }
  Rng rng(options.seed);
  std::vector<Comparison> out;
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store.at(i);
    if (!p.trainable()) continue;
    std::vector<double> a, n;
    for (std::size_t j : detail::probe_indices(p.value.size(), options.max_entries, rng)) {
      const double saved = p.value[j];
      p.value[j] = saved + options.step;
      double up, down;
      {
        Tape<double> tape;
        up = loss(tape).value()[0];
      }
      p.value[j] = saved - options.step;
      {
        Tape<double> tape;
        down = loss(tape).value()[0];
      }
      p.value[j] = saved;
      a.push_back(p.grad[j]);
      n.push_back((up - down) / (2.0 * options.step));
    }
    out.push_back(detail::compare(p.name, a, n));
  }
  return out;
}

}  // namespace sfde::gradcheck
