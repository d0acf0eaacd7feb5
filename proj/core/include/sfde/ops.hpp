#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sfde/autodiff.hpp"
#include "sfde/random.hpp"

// Differentiable kernels recorded on a Tape. Feature maps are N x C x H x W,
// vectors are N x F. Every kernel validates shapes and throws ShapeError with
// the offending extents.
namespace sfde::ops {

enum class Mode { Train, Eval };

struct Conv2dSpec {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t dilation = 1;
  std::size_t groups = 1;
};

/// Padding that keeps H x W at stride 1 for an odd kernel.
std::size_t same_padding(std::size_t kernel, std::size_t dilation);

/// floor((in + 2 pad - dilation (K - 1) - 1) / stride) + 1
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, const Conv2dSpec& spec);

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, const Conv2dSpec& spec);
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, const Conv2dSpec& spec);

struct BatchNormSpec {
  double epsilon = 1e-5;
  double momentum = 0.1;
};

/// Per-channel normalization over N (and H x W for rank-4 input). Train mode
/// uses batch statistics and updates the running buffers in place.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, Parameter<T>& running_mean,
                  Parameter<T>& running_var, Mode mode, const BatchNormSpec& spec = {});

template <typename T> Var<T> relu(Var<T> x);
template <typename T> Var<T> gelu(Var<T> x);
template <typename T> Var<T> sigmoid(Var<T> x);
template <typename T> Var<T> softplus(Var<T> x);
/// Softmax along the last axis, max-subtracted.
template <typename T> Var<T> softmax(Var<T> x);

/// Broadcasting elementwise arithmetic: equal ranks, each extent equal or 1.
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> x, double factor);
template <typename T> Var<T> add_scalar(Var<T> x, double offset);
/// 1 - x
template <typename T> Var<T> one_minus(Var<T> x);
/// x * w[index] for a learnable vector w.
template <typename T> Var<T> scale_by_element(Var<T> x, Var<T> w, std::size_t index);

template <typename T> Var<T> concat_channels(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_channels(Var<T> x, std::size_t start, std::size_t count);
template <typename T> Var<T> slice_batch(Var<T> x, std::size_t start, std::size_t count);
template <typename T> Var<T> concat_batch(const std::vector<Var<T>>& parts);
template <typename T> Var<T> reshape(Var<T> x, Shape shape);
/// [B, R, C] -> [B, C, R]
template <typename T> Var<T> transpose_last2(Var<T> x);

/// Cell i covers rows floor(i H / out_h) .. ceil((i + 1) H / out_h) - 1.
template <typename T> Var<T> adaptive_avg_pool(Var<T> x, std::size_t out_h, std::size_t out_w);
template <typename T> Var<T> global_avg_pool(Var<T> x);
/// Align-corners-false bilinear interpolation to a grid no smaller than the input.
template <typename T> Var<T> upsample_bilinear(Var<T> x, std::size_t out_h, std::size_t out_w);

struct BilinearTap {
  std::size_t i0, i1;
  double frac;
};
/// Source taps along one axis (src = (o + 0.5) in / out - 0.5, clamped at 0).
std::vector<BilinearTap> bilinear_taps(std::size_t in, std::size_t out);

inline constexpr double kGemClamp = 1e-6;
/// (mean(max(x, 1e-6)^p))^(1/p) per channel, p a 1-element tensor >= 1.
template <typename T> Var<T> gem_pool(Var<T> x, Var<T> p);

/// x [M, in] . weight[out, in]^T + bias[out]
template <typename T> Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias);

/// Row-stochastic attention weights of the last attention() call, per
/// (batch, head): seq x seq blocks, row-major.
template <typename T>
struct AttentionProbe {
  std::size_t batch = 0;
  std::size_t heads = 0;
  std::size_t seq = 0;
  std::vector<T> weights;
};

/// Scaled dot-product attention core on [batch * seq, C] projections with C
/// split into `heads` contiguous slices.
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::size_t batch, std::size_t heads,
                 AttentionProbe<T>* probe = nullptr);

template <typename T>
struct AttentionWeights {
  Var<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

/// Multi-head self-attention over tokens [N, L, C] with learned Q/K/V/output
/// projections.
template <typename T>
Var<T> multi_head_attention(Var<T> tokens, const AttentionWeights<T>& w, std::size_t heads,
                            AttentionProbe<T>* probe = nullptr);

/// Inverted dropout; identity outside Mode::Train.
template <typename T> Var<T> dropout(Var<T> x, double rate, Mode mode, Rng& rng);

template <typename T> Var<T> l2_normalize_rows(Var<T> x);
template <typename T> Var<T> sum(Var<T> x);
template <typename T> Var<T> mean(Var<T> x);
/// sum_i weights[i] * terms[i] over scalar terms.
template <typename T> Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<double>& weights);

/// Mean over rows of -log softmax(logits[i])[labels[i]].
template <typename T> Var<T> cross_entropy(Var<T> logits, std::span<const std::size_t> labels);

/// Symmetric InfoNCE between row-aligned embeddings; the similarity scale is
/// exp(-log_temperature).
template <typename T> Var<T> info_nce(Var<T> a, Var<T> b, Var<T> log_temperature);

// Scalar helpers shared with non-taped code.
double sigmoid_scalar(double x);
double gelu_scalar(double x);
double softplus_scalar(double x);
std::vector<double> softmax_values(std::span<const double> logits);

}  // namespace sfde::ops
