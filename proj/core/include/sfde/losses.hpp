#pragma once

#include <cmath>
#include <span>

#include "sfde/ops.hpp"

namespace sfde::losses {

inline constexpr double kInitialTemperature = 0.07;

struct LossWeights {
  double classification = 0.1;
  double local_contrast = 1.0;
  double frequency_alignment = 1.3;

  void validate() const;
};

struct LossParts {
  double classification = 0.0;
  double local_contrast = 0.0;
  double frequency_alignment = 0.0;
};

/// Weighted sum of the three supervision terms.
double total_loss(const LossParts& parts, const LossWeights& weights);

/// Cross-entropy averaged over every row (both views stacked).
template <typename T>
Var<T> classification(Var<T> logits, std::span<const std::size_t> labels);

/// Symmetric InfoNCE between row-aligned unit vectors.
template <typename T>
Var<T> contrastive(Var<T> drone, Var<T> satellite, Var<T> log_temperature);

/// GeM-pools both views' maps [N, C, H, W], L2-normalizes, then applies the
/// symmetric contrastive loss. Used for both the local and the frequency terms.
template <typename T>
Var<T> pooled_contrastive(Var<T> drone_maps, Var<T> satellite_maps, Var<T> gem_exponent, Var<T> log_temperature);

/// [N, C, H, W] -> unit rows [N, C] of GeM-pooled channels.
template <typename T>
Var<T> pooled_descriptor(Var<T> maps, Var<T> gem_exponent);

}  // namespace sfde::losses
