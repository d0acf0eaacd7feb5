#pragma once

#include "sfde/nn.hpp"

namespace sfde {

/// Global branch: average pool, then linear -> batch norm -> dropout ->
/// classifier. The post-norm vector is the retrieval descriptor.
template <typename T>
class GlobalBranch {
 public:
  struct Output {
    Var<T> embedding;  // [N, E]
    Var<T> logits;     // [N, P]; unbound when the branch has no classifier
  };

  /// num_classes == 0 builds an embedding-only head.
  GlobalBranch(ParameterStore<T>& store, std::size_t channels, std::size_t embedding_dim, std::size_t num_classes,
               double dropout, Rng& rng);

  Output forward(const Context<T>& ctx, Var<T> features) const;

  std::size_t embedding_dim() const { return embedding_dim_; }

 private:
  std::size_t channels_;
  std::size_t embedding_dim_;
  double dropout_;
  nn::Linear<T> reduce_;
  nn::BatchNorm<T> norm_;
  nn::Linear<T> classifier_;
  bool has_classifier_;
};

}  // namespace sfde
