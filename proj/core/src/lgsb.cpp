#include "sfde/lgsb.hpp"

#include <string>

namespace sfde {

template <typename T>
Var<T> fuse_scales(const ScaleTriple<T>& t, Var<T> gate) {
  Var<T> sum = ops::add(ops::add(ops::mul(gate, t.fine), t.mid), ops::mul(ops::one_minus(gate), t.coarse));
  return ops::scale(sum, 1.0 / 3.0);
}

template <typename T>
LocalBranch<T>::LocalBranch(ParameterStore<T>& store, std::size_t channels, Rng& rng)
    : channels_(channels), quarter_(channels / 4) {
  if (channels == 0 || channels % 4 != 0) {
    throw ConfigError("local branch: channel count " + std::to_string(channels) + " must be divisible by 4");
  }
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t d = i + 1;
    dilated_[i] = nn::Conv2d<T>(store, "local.dilated" + std::to_string(d), channels, quarter_, 3,
                                {.padding = d, .dilation = d}, true, rng);
  }
  gate_conv_ = nn::Conv2d<T>(store, "local.gate.conv", 2 * quarter_, quarter_, 1, {}, true, rng);
  gate_norm_ = nn::BatchNorm<T>(store, "local.gate.norm", quarter_);
  for (std::size_t s = 0; s < kLevels; ++s) {
    const std::string name = "local.pyramid" + std::to_string(s + 1);
    level_conv_[s] = nn::Conv2d<T>(store, name + ".conv", quarter_, quarter_, 1, {}, true, rng);
    level_norm_[s] = nn::BatchNorm<T>(store, name + ".norm", quarter_);
  }
  alpha_ = &store.add("local.pyramid.alpha", Tensor<T>({kLevels}), ParamRole::Bias);
  compress_ = nn::Conv2d<T>(store, "local.pyramid.compress", channels, quarter_, 1, {}, true, rng);
  gem_ = nn::GemExponent<T>(store, "local.gem.p");
  expand_ = nn::Conv2d<T>(store, "local.expand", quarter_, channels, 1, {}, true, rng);
}

template <typename T>
void LocalBranch<T>::check_input(Var<T> f) const {
  const Shape& s = f.shape();
  if (s.size() != 4 || s[1] != channels_) {
    throw ShapeError("local branch: expected [N x " + std::to_string(channels_) + " x H x W], got " + to_string(s));
  }
  if (s[2] < kLevels || s[3] < kLevels) {
    throw ConfigError("local branch: pyramid level 4 needs H, W >= 4, got " + to_string(s) +
                      "; raise the input size");
  }
}

template <typename T>
ScaleTriple<T> LocalBranch<T>::multiscale_split(const Context<T>& ctx, Var<T> f) const {
  return {dilated_[0](ctx, f), dilated_[1](ctx, f), dilated_[2](ctx, f)};
}

template <typename T>
Var<T> LocalBranch<T>::interaction_fuse(const Context<T>& ctx, const ScaleTriple<T>& t) const {
  Var<T> gate = ops::sigmoid(gate_norm_(ctx, gate_conv_(ctx, ops::concat_channels<T>({t.fine, t.coarse}))));
  return fuse_scales(t, gate);
}

template <typename T>
std::vector<Var<T>> LocalBranch<T>::pyramid_levels(const Context<T>& ctx, Var<T> g) const {
  const std::size_t h = g.dim(2), w = g.dim(3);
  std::vector<Var<T>> levels;
  for (std::size_t s = 0; s < kLevels; ++s) {
    Var<T> pooled = ops::adaptive_avg_pool(g, s + 1, s + 1);
    Var<T> z = ops::relu(level_norm_[s](ctx, level_conv_[s](ctx, pooled)));
    levels.push_back(ops::upsample_bilinear(z, h, w));
  }
  return levels;
}

template <typename T>
Var<T> LocalBranch<T>::pyramid_enhance(const Context<T>& ctx, Var<T> g) const {
  Var<T> weights = ops::softmax(ctx.bind(alpha_));
  std::vector<Var<T>> levels = pyramid_levels(ctx, g);
  for (std::size_t s = 0; s < kLevels; ++s) levels[s] = ops::scale_by_element(levels[s], weights, s);
  return compress_(ctx, ops::concat_channels(levels));
}

template <typename T>
Var<T> LocalBranch<T>::global_recalibrate(const Context<T>& ctx, Var<T> p) const {
  Var<T> pooled = gem_.pool(ctx, p);
  return expand_(ctx, ops::relu(ops::add(p, pooled)));
}

template <typename T>
Var<T> LocalBranch<T>::forward(const Context<T>& ctx, Var<T> f) const {
  check_input(f);
  Var<T> fused = interaction_fuse(ctx, multiscale_split(ctx, f));
  Var<T> enhanced = global_recalibrate(ctx, pyramid_enhance(ctx, fused));
  return ops::scale(ops::add(enhanced, f), 0.5);
}

template <typename T>
std::array<double, LocalBranch<T>::kLevels> LocalBranch<T>::level_weights() const {
  std::vector<double> logits(alpha_->value.values().begin(), alpha_->value.values().end());
  const auto w = ops::softmax_values(logits);
  std::array<double, kLevels> out{};
  std::copy(w.begin(), w.end(), out.begin());
  return out;
}

template Var<float> fuse_scales<float>(const ScaleTriple<float>&, Var<float>);
template Var<double> fuse_scales<double>(const ScaleTriple<double>&, Var<double>);
template class LocalBranch<float>;
template class LocalBranch<double>;

}  // namespace sfde
