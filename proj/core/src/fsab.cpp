#include "sfde/fsab.hpp"

#include <cassert>
#include <numbers>
#include <string>

#include "sfde/spectral.hpp"

namespace sfde {
namespace {

#ifndef NDEBUG
template <typename T>
void assert_range(Var<T> v, double lo, double hi, bool open_low) {
  for (T x : v.value().values()) {
    assert(std::isfinite(x));
    assert(open_low ? x > T(lo) : x >= T(lo));
    assert(x <= T(hi));
  }
}
#endif

}  // namespace

template <typename T>
FrequencyBranch<T>::FrequencyBranch(ParameterStore<T>& store, std::size_t channels, std::size_t heads, double dropout,
                                    std::size_t token_budget, Rng& rng)
    : channels_(channels), heads_(heads), dropout_(dropout), token_budget_(token_budget) {
  if (channels < 4 || channels % 4 != 0) {
    throw ConfigError("frequency branch: channel count " + std::to_string(channels) + " must be a multiple of 4");
  }
  if (heads == 0 || channels % heads != 0) {
    throw ConfigError("frequency branch: " + std::to_string(channels) + " channels are not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const std::size_t c = channels;
  se_reduce_ = nn::Conv2d<T>(store, "frequency.channel_gate.reduce", c, c / 4, 1, {}, true, rng);
  se_expand_ = nn::Conv2d<T>(store, "frequency.channel_gate.expand", c / 4, c, 1, {}, true, rng);
  spatial_gate_ = nn::Conv2d<T>(store, "frequency.spatial_gate", c, 1, 3, {.padding = 1}, true, rng);
  calibration_ = nn::Conv2d<T>(store, "frequency.calibration", c, c, 1, {.groups = c}, true, rng);
  encode_in_ = nn::Conv2d<T>(store, "frequency.encode.in", 2 * c, c, 1, {}, true, rng);
  encode_norm1_ = nn::BatchNorm<T>(store, "frequency.encode.norm1", c);
  encode_dw_ = nn::Conv2d<T>(store, "frequency.encode.dwconv", c, c, 3, {.padding = 1, .groups = c}, true, rng);
  encode_pw_ = nn::Conv2d<T>(store, "frequency.encode.pwconv", c, c, 1, {}, true, rng);
  encode_norm2_ = nn::BatchNorm<T>(store, "frequency.encode.norm2", c);
  pos_in_ = nn::Conv2d<T>(store, "frequency.position.in", 2, c, 1, {}, true, rng);
  pos_out_ = nn::Conv2d<T>(store, "frequency.position.out", c, c, 1, {}, true, rng);
  wq_ = nn::Linear<T>(store, "frequency.attention.query", c, c, rng);
  wk_ = nn::Linear<T>(store, "frequency.attention.key", c, c, rng);
  wv_ = nn::Linear<T>(store, "frequency.attention.value", c, c, rng);
  wo_ = nn::Linear<T>(store, "frequency.attention.output", c, c, rng);
  residual_gate_ = nn::Conv2d<T>(store, "frequency.residual_gate", c, c, 1, {}, true, rng);
  const std::array<std::size_t, 4> widths{3 * c, 2 * c, c, c};
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string name = "frequency.fusion" + std::to_string(i + 1);
    fusion_conv_[i] = nn::Conv2d<T>(store, name + ".conv", widths[i], widths[i + 1], 1, {}, true, rng);
    fusion_norm_[i] = nn::BatchNorm<T>(store, name + ".norm", widths[i + 1]);
  }
}

template <typename T>
Tensor<T> FrequencyBranch<T>::coordinate_grid(std::size_t h, std::size_t w_half) {
  Tensor<T> grid({1, 2, h, w_half});
  auto axis = [](std::size_t i, std::size_t n) { return n == 1 ? 0.0 : -1.0 + 2.0 * double(i) / double(n - 1); };
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w_half; ++c) {
      grid.at(0, 0, r, c) = T(axis(r, h));
      grid.at(0, 1, r, c) = T(axis(c, w_half));
    }
  return grid;
}

template <typename T>
std::pair<Var<T>, GateSet<T>> FrequencyBranch<T>::amplitude_gating(const Context<T>& ctx, Var<T> amp) const {
  for (T v : amp.value().values()) {
    if (v < T(0)) throw ValidationError("amplitude gating: negative amplitude");
  }
  if (hooks_.pin_gates) return {amp, {}};
  Var<T> pooled = ops::global_avg_pool(amp);
  GateSet<T> gates;
  gates.channel = ops::sigmoid(se_expand_(ctx, ops::relu(se_reduce_(ctx, pooled))));
  gates.spatial = ops::sigmoid(spatial_gate_(ctx, amp));
  gates.calibration = ops::softplus(calibration_(ctx, pooled));
#ifndef NDEBUG
  assert_range(gates.channel, 0.0, 1.0, false);
  assert_range(gates.spatial, 0.0, 1.0, false);
  assert_range(gates.calibration, 0.0, std::numeric_limits<double>::max(), false);
#endif
  Var<T> weighted = ops::mul(ops::mul(ops::mul(amp, gates.calibration), gates.spatial), gates.channel);
  return {weighted, gates};
}

template <typename T>
Var<T> FrequencyBranch<T>::encode(const Context<T>& ctx, Var<T> weighted_amp, Var<T> phase) const {
  Var<T> x = ops::concat_channels<T>({weighted_amp, ops::scale(phase, 1.0 / std::numbers::pi)});
  x = ops::gelu(encode_norm1_(ctx, encode_in_(ctx, x)));
  return ops::gelu(encode_norm2_(ctx, encode_pw_(ctx, encode_dw_(ctx, x))));
}

template <typename T>
Var<T> FrequencyBranch<T>::spectral_attention(const Context<T>& ctx, Var<T> encoded,
                                              ops::AttentionProbe<T>* probe) const {
  const Shape s = encoded.shape();
  const std::size_t n = s[0], c = s[1], h = s[2], w = s[3], len = h * w;
  if (len > token_budget_) {
    throw ConfigError("frequency attention: " + std::to_string(len) + " spectral tokens exceed the budget of " +
                      std::to_string(token_budget_) + "; use a smaller input size");
  }
  Var<T> grid = ctx.tape.constant(coordinate_grid(h, w));
  Var<T> position = pos_out_(ctx, ops::gelu(pos_in_(ctx, grid)));
  Var<T> x = ops::add(encoded, position);
  if (hooks_.bypass_attention) return x;
  Var<T> tokens = ops::transpose_last2(ops::reshape(x, {n, c, len}));
  ops::AttentionWeights<T> weights{ctx.bind(wq_.weight), ctx.bind(wq_.bias), ctx.bind(wk_.weight),
                                   ctx.bind(wk_.bias),   ctx.bind(wv_.weight), ctx.bind(wv_.bias),
                                   ctx.bind(wo_.weight), ctx.bind(wo_.bias)};
  Var<T> attended = ops::add(tokens, ops::multi_head_attention(tokens, weights, heads_, probe));
  return ops::reshape(ops::transpose_last2(attended), {n, c, h, w});
}

template <typename T>
Var<T> FrequencyBranch<T>::gated_fusion(const Context<T>& ctx, Var<T> attended, Var<T> weighted_amp,
                                        Var<T>* gate_out) const {
  Var<T> gate = ops::sigmoid(residual_gate_(ctx, weighted_amp));
#ifndef NDEBUG
  assert_range(gate, 0.0, 1.0, false);
#endif
  if (gate_out) *gate_out = gate;
  return ops::add(ops::mul(ops::sigmoid(attended), ops::one_minus(gate)), ops::mul(weighted_amp, gate));
}

template <typename T>
std::array<Var<T>, 3> FrequencyBranch<T>::reconstruct(Var<T> f, Var<T> fused_amp, Var<T> weighted_amp,
                                                      Var<T> phase) const {
  const std::size_t width = f.dim(3);
  return {f, spectral::irfft2(spectral::polar_recompose(fused_amp, phase), width),
          spectral::irfft2(spectral::polar_recompose(weighted_amp, phase), width)};
}

template <typename T>
Var<T> FrequencyBranch<T>::fuse(const Context<T>& ctx, const std::array<Var<T>, 3>& paths) const {
  Var<T> x = ops::concat_channels<T>({paths[0], paths[1], paths[2]});
  for (std::size_t i = 0; i < 3; ++i) {
    x = ops::gelu(fusion_norm_[i](ctx, fusion_conv_[i](ctx, x)));
    if (ctx.training()) x = ops::dropout(x, dropout_, ctx.mode, ctx.dropout_rng());
  }
  return x;
}

template <typename T>
Var<T> FrequencyBranch<T>::forward(const Context<T>& ctx, Var<T> f, FrequencyTrace<T>* trace,
                                   ops::AttentionProbe<T>* probe) const {
  const Shape& s = f.shape();
  if (s.size() != 4 || s[1] != channels_) {
    throw ShapeError("frequency branch: expected [N x " + std::to_string(channels_) + " x H x W], got " +
                     to_string(s));
  }
  if (s[3] % 2 != 0) throw ConfigError("frequency branch: feature width " + std::to_string(s[3]) + " must be even");
  Var<T> packed = spectral::rfft2(f);
  Var<T> amp = spectral::amplitude(packed);
  Var<T> phase = spectral::phase(packed);
  auto [weighted, gates] = amplitude_gating(ctx, amp);
  Var<T> attended = spectral_attention(ctx, encode(ctx, weighted, phase), probe);
  Var<T> residual_gate;
  Var<T> fused = gated_fusion(ctx, attended, weighted, &residual_gate);
  auto paths = reconstruct(f, fused, weighted, phase);
  if (trace) {
    trace->amplitude = amp;
    trace->phase = phase;
    trace->weighted_amplitude = weighted;
    trace->fused_amplitude = fused;
    trace->attended = attended;
    trace->residual_gate = residual_gate;
    trace->gates = gates;
    trace->paths = paths;
  }
  return fuse(ctx, paths);
}

template class FrequencyBranch<float>;
template class FrequencyBranch<double>;

}  // namespace sfde
