#pragma once

#include <array>

#include "sfde/nn.hpp"

namespace sfde {

template <typename T>
struct GateSet {
  Var<T> channel;      // [N, C, 1, 1]
  Var<T> spatial;      // [N, 1, H, W']
  Var<T> calibration;  // [N, C, 1, 1], positive
};

/// Intermediates of one frequency-branch forward.
template <typename T>
struct FrequencyTrace {
  Var<T> amplitude, phase, weighted_amplitude, fused_amplitude, attended, residual_gate;
  GateSet<T> gates;
  std::array<Var<T>, 3> paths;
};

struct FrequencyHooks {
  /// Replaces every amplitude gate with 1 so the weighted amplitude equals the input amplitude.
  bool pin_gates = false;
  /// Skips the self-attention step (the encoded spectrum passes through with its positional term).
  bool bypass_attention = false;
};

/// Frequency branch: amplitude/phase decomposition, triple amplitude gating,
/// amplitude-phase encoding with positional self-attention, gated residual
/// fusion, three-path reconstruction and a pointwise fusion stack.
template <typename T>
class FrequencyBranch {
 public:
  FrequencyBranch(ParameterStore<T>& store, std::size_t channels, std::size_t heads, double dropout,
                  std::size_t token_budget, Rng& rng);

  /// 1 x 2 x H x W' grid: channel 0 runs -1..1 down the rows, channel 1 across the columns.
  static Tensor<T> coordinate_grid(std::size_t h, std::size_t w_half);

  std::pair<Var<T>, GateSet<T>> amplitude_gating(const Context<T>& ctx, Var<T> amp) const;
  Var<T> encode(const Context<T>& ctx, Var<T> weighted_amp, Var<T> phase) const;
  Var<T> spectral_attention(const Context<T>& ctx, Var<T> encoded, ops::AttentionProbe<T>* probe = nullptr) const;
  Var<T> gated_fusion(const Context<T>& ctx, Var<T> attended, Var<T> weighted_amp, Var<T>* gate_out = nullptr) const;
  std::array<Var<T>, 3> reconstruct(Var<T> f, Var<T> fused_amp, Var<T> weighted_amp, Var<T> phase) const;
  Var<T> fuse(const Context<T>& ctx, const std::array<Var<T>, 3>& paths) const;

  Var<T> forward(const Context<T>& ctx, Var<T> f, FrequencyTrace<T>* trace = nullptr,
                 ops::AttentionProbe<T>* probe = nullptr) const;

  FrequencyHooks& hooks() { return hooks_; }

 private:
  std::size_t channels_;
  std::size_t heads_;
  double dropout_;
  std::size_t token_budget_;
  FrequencyHooks hooks_;

  nn::Conv2d<T> se_reduce_, se_expand_;
  nn::Conv2d<T> spatial_gate_;
  nn::Conv2d<T> calibration_;
  nn::Conv2d<T> encode_in_;
  nn::BatchNorm<T> encode_norm1_;
  nn::Conv2d<T> encode_dw_, encode_pw_;
  nn::BatchNorm<T> encode_norm2_;
  nn::Conv2d<T> pos_in_, pos_out_;
  nn::Linear<T> wq_, wk_, wv_, wo_;
  nn::Conv2d<T> residual_gate_;
  std::array<nn::Conv2d<T>, 3> fusion_conv_;
  std::array<nn::BatchNorm<T>, 3> fusion_norm_;
};

}  // namespace sfde
