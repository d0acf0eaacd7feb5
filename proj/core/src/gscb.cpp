#include "sfde/gscb.hpp"

namespace sfde {

template <typename T>
GlobalBranch<T>::GlobalBranch(ParameterStore<T>& store, std::size_t channels, std::size_t embedding_dim,
                              std::size_t num_classes, double dropout, Rng& rng)
    : channels_(channels), embedding_dim_(embedding_dim), dropout_(dropout), has_classifier_(num_classes > 0) {
  if (embedding_dim == 0) throw ConfigError("global branch embedding size must be positive");
  reduce_ = nn::Linear<T>(store, "global.reduce", channels, embedding_dim, rng);
  norm_ = nn::BatchNorm<T>(store, "global.norm", embedding_dim);
  if (has_classifier_) {
    classifier_ = nn::Linear<T>(store, "global.classifier", embedding_dim, num_classes, rng, nn::Init::Kaiming);
  }
}

template <typename T>
typename GlobalBranch<T>::Output GlobalBranch<T>::forward(const Context<T>& ctx, Var<T> features) const {
  const Shape& s = features.shape();
  if (s.size() != 4 || s[1] != channels_) {
    throw ShapeError("global branch: expected [N x " + std::to_string(channels_) + " x H x W], got " + to_string(s));
  }
  Var<T> pooled = ops::reshape(ops::global_avg_pool(features), {s[0], channels_});
  Output out;
  out.embedding = norm_(ctx, reduce_(ctx, pooled));
  if (has_classifier_) {
    Var<T> dropped = ctx.training() ? ops::dropout(out.embedding, dropout_, ctx.mode, ctx.dropout_rng())
                                    : out.embedding;
    out.logits = classifier_(ctx, dropped);
  }
  return out;
}

template class GlobalBranch<float>;
template class GlobalBranch<double>;

}  // namespace sfde
