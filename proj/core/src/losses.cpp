#include "sfde/losses.hpp"

#include <string>

namespace sfde::losses {

void LossWeights::validate() const {
  for (double w : {classification, local_contrast, frequency_alignment}) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw ConfigError("loss weights must be finite and non-negative, got " + std::to_string(w));
    }
  }
}

double total_loss(const LossParts& parts, const LossWeights& weights) {
  weights.validate();
  const long double sum = static_cast<long double>(weights.classification) * parts.classification +
                          static_cast<long double>(weights.local_contrast) * parts.local_contrast +
                          static_cast<long double>(weights.frequency_alignment) * parts.frequency_alignment;
  return static_cast<double>(sum);
}

template <typename T>
Var<T> classification(Var<T> logits, std::span<const std::size_t> labels) {
  return ops::cross_entropy(logits, labels);
}

template <typename T>
Var<T> contrastive(Var<T> drone, Var<T> satellite, Var<T> log_temperature) {
  return ops::info_nce(drone, satellite, log_temperature);
}

template <typename T>
Var<T> pooled_descriptor(Var<T> maps, Var<T> gem_exponent) {
  const Shape s = maps.shape();
  if (s.size() != 4) throw ShapeError("pooled_descriptor: expected [N x C x H x W], got " + to_string(s));
  return ops::l2_normalize_rows(ops::reshape(ops::gem_pool(maps, gem_exponent), {s[0], s[1]}));
}

template <typename T>
Var<T> pooled_contrastive(Var<T> drone_maps, Var<T> satellite_maps, Var<T> gem_exponent, Var<T> log_temperature) {
  return contrastive(pooled_descriptor(drone_maps, gem_exponent), pooled_descriptor(satellite_maps, gem_exponent),
                     log_temperature);
}

#define SFDE_INSTANTIATE_LOSSES(T)                                                  \
  template Var<T> classification<T>(Var<T>, std::span<const std::size_t>);         \
  template Var<T> contrastive<T>(Var<T>, Var<T>, Var<T>);                          \
  template Var<T> pooled_descriptor<T>(Var<T>, Var<T>);                            \
  template Var<T> pooled_contrastive<T>(Var<T>, Var<T>, Var<T>, Var<T>);

SFDE_INSTANTIATE_LOSSES(float)
SFDE_INSTANTIATE_LOSSES(double)

}  // namespace sfde::losses
