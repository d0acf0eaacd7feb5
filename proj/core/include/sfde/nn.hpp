#pragma once

#include <cmath>
#include <string>

#include "sfde/ops.hpp"

namespace sfde {

/// Per-forward state threaded through every module.
template <typename T>
struct Context {
  Tape<T>& tape;
  ops::Mode mode = ops::Mode::Eval;
  Rng* rng = nullptr;

  bool training() const { return mode == ops::Mode::Train; }
  Var<T> bind(Parameter<T>* p) const { return p ? tape.parameter(*p) : Var<T>(); }
  Rng& dropout_rng() const {
    if (!rng) throw ValidationError("train-mode forward needs a random stream for dropout");
    return *rng;
  }
};

namespace nn {

enum class Init { TruncatedNormal, Kaiming, Zeros, Ones, Constant };

template <typename T>
Tensor<T> make_tensor(Shape shape, Init init, std::size_t fan_in, Rng& rng, double value = 0.0) {
  Tensor<T> t(std::move(shape));
  switch (init) {
    case Init::TruncatedNormal:
      for (auto& v : t.values()) v = T(rng.truncated_normal(0.02));
      break;
    case Init::Kaiming: {
      const double std = std::sqrt(2.0 / double(fan_in));
      for (auto& v : t.values()) v = T(rng.normal() * std);
      break;
    }
    case Init::Zeros: break;
    case Init::Ones: t.fill(T(1)); break;
    case Init::Constant: t.fill(T(value)); break;
  }
  return t;
}

template <typename T>
struct Conv2d {
  Parameter<T>* weight = nullptr;
  Parameter<T>* bias = nullptr;
  ops::Conv2dSpec spec;

  Conv2d() = default;
  Conv2d(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
         ops::Conv2dSpec s, bool with_bias, Rng& rng, Init init = Init::TruncatedNormal)
      : spec(s) {
    if (in % s.groups != 0 || out % s.groups != 0) {
      throw ConfigError(name + ": channels " + std::to_string(in) + "->" + std::to_string(out) +
                        " not divisible by groups " + std::to_string(s.groups));
    }
    const std::size_t fan_in = in / s.groups * kernel * kernel;
    weight = &store.add(name + ".weight", make_tensor<T>({out, in / s.groups, kernel, kernel}, init, fan_in, rng),
                        ParamRole::Weight);
    if (with_bias) bias = &store.add(name + ".bias", Tensor<T>({out}), ParamRole::Bias);
  }

  Var<T> operator()(const Context<T>& ctx, Var<T> x) const {
    return ops::conv2d(x, ctx.bind(weight), ctx.bind(bias), spec);
  }
};

template <typename T>
struct BatchNorm {
  Parameter<T>* gamma = nullptr;
  Parameter<T>* beta = nullptr;
  Parameter<T>* running_mean = nullptr;
  Parameter<T>* running_var = nullptr;

  BatchNorm() = default;
  BatchNorm(ParameterStore<T>& store, const std::string& name, std::size_t channels) {
    gamma = &store.add(name + ".gamma", Tensor<T>({channels}, T(1)), ParamRole::Bias);
    beta = &store.add(name + ".beta", Tensor<T>({channels}), ParamRole::Bias);
    running_mean = &store.add(name + ".running_mean", Tensor<T>({channels}), ParamRole::Buffer);
    running_var = &store.add(name + ".running_var", Tensor<T>({channels}, T(1)), ParamRole::Buffer);
  }

  Var<T> operator()(const Context<T>& ctx, Var<T> x) const {
    return ops::batch_norm(x, ctx.bind(gamma), ctx.bind(beta), *running_mean, *running_var, ctx.mode);
  }
};

template <typename T>
struct Linear {
  Parameter<T>* weight = nullptr;
  Parameter<T>* bias = nullptr;

  Linear() = default;
  Linear(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         Init init = Init::TruncatedNormal) {
    weight = &store.add(name + ".weight", make_tensor<T>({out, in}, init, in, rng), ParamRole::Weight);
    bias = &store.add(name + ".bias", Tensor<T>({out}), ParamRole::Bias);
  }

  Var<T> operator()(const Context<T>& ctx, Var<T> x) const {
    return ops::linear(x, ctx.bind(weight), ctx.bind(bias));
  }
};

/// Learnable GeM exponent, kept inside [1, 128].
template <typename T>
struct GemExponent {
  static constexpr double kMin = 1.0;
  static constexpr double kMax = 128.0;
  Parameter<T>* p = nullptr;

  GemExponent() = default;
  GemExponent(ParameterStore<T>& store, const std::string& name, double initial = 3.0) {
    p = &store.add(name, Tensor<T>({1}, T(initial)), ParamRole::Bias);
  }

  Var<T> pool(const Context<T>& ctx, Var<T> x) const { return ops::gem_pool(x, ctx.bind(p)); }
  void clamp() const { p->value[0] = std::clamp(p->value[0], T(kMin), T(kMax)); }
};

}  // namespace nn
}  // namespace sfde
