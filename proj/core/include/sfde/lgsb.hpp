#pragma once

#include <array>
#include <vector>

#include "sfde/nn.hpp"

namespace sfde {

template <typename T>
struct ScaleTriple {
  Var<T> fine, mid, coarse;
};

/// (gate * fine + mid + (1 - gate) * coarse) / 3
template <typename T>
Var<T> fuse_scales(const ScaleTriple<T>& t, Var<T> gate);

/// Local branch: dilated multiscale split, gated interaction, four-level
/// learnable pyramid, GeM recalibration and a residual average with the input.
template <typename T>
class LocalBranch {
 public:
  static constexpr std::size_t kLevels = 4;

  LocalBranch(ParameterStore<T>& store, std::size_t channels, Rng& rng);

  ScaleTriple<T> multiscale_split(const Context<T>& ctx, Var<T> f) const;
  Var<T> interaction_fuse(const Context<T>& ctx, const ScaleTriple<T>& t) const;
  Var<T> pyramid_enhance(const Context<T>& ctx, Var<T> g) const;
  /// Per-level maps before weighting, exposed for inspection.
  std::vector<Var<T>> pyramid_levels(const Context<T>& ctx, Var<T> g) const;
  Var<T> global_recalibrate(const Context<T>& ctx, Var<T> p) const;
  Var<T> forward(const Context<T>& ctx, Var<T> f) const;

  /// softmax of the level logits.
  std::array<double, kLevels> level_weights() const;

  Parameter<T>& level_logits() const { return *alpha_; }
  const nn::GemExponent<T>& gem() const { return gem_; }
  void apply_constraints() const { gem_.clamp(); }

 private:
  void check_input(Var<T> f) const;

  std::size_t channels_;
  std::size_t quarter_;
  std::array<nn::Conv2d<T>, 3> dilated_;
  nn::Conv2d<T> gate_conv_;
  nn::BatchNorm<T> gate_norm_;
  std::array<nn::Conv2d<T>, kLevels> level_conv_;
  std::array<nn::BatchNorm<T>, kLevels> level_norm_;
  Parameter<T>* alpha_ = nullptr;
  nn::Conv2d<T> compress_;
  nn::GemExponent<T> gem_;
  nn::Conv2d<T> expand_;
};

}  // namespace sfde
