#pragma once

#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "sfde/backbone.hpp"
#include "sfde/fsab.hpp"
#include "sfde/gscb.hpp"
#include "sfde/lgsb.hpp"
#include "sfde/losses.hpp"

namespace sfde {

struct BranchSwitches {
  bool local = true;
  bool global = true;
  bool frequency = true;

  friend bool operator==(const BranchSwitches&, const BranchSwitches&) = default;
};

struct ModelConfig {
  BackboneConfig backbone{.input_size = 128};
  std::size_t embedding_dim = 256;
  std::size_t num_classes = 0;
  std::size_t heads = 4;
  double global_dropout = 0.5;
  double fusion_dropout = 0.1;
  std::size_t token_budget = 4096;
  BranchSwitches branches;

  std::size_t channels() const { return backbone.out_channels(); }
  /// Length of the assembled retrieval descriptor.
  std::size_t descriptor_dim() const;
  void validate() const;
};

/// Three-branch cross-view embedding network on a weight-shared backbone.
/// Batches stack views along N: rows [0, N) drone, [N, 2N) satellite.
template <typename T>
class SfdeModel {
 public:
  struct Outputs {
    Var<T> features;
    typename GlobalBranch<T>::Output global;
    Var<T> local;
    Var<T> frequency;
  };

  struct Loss {
    Var<T> total;
    losses::LossParts parts;
  };

  SfdeModel(const ModelConfig& config, std::uint64_t seed);

  Outputs forward(const Context<T>& ctx, Var<T> images, FrequencyTrace<T>* trace = nullptr) const;

  /// images [2N, 3, S, S]; labels[i] is the class index of pair i.
  Loss loss(const Context<T>& ctx, Var<T> images, std::span<const std::size_t> labels,
            const losses::LossWeights& weights) const;

  /// Descriptor rows [N, D] for eval-mode images.
  std::vector<std::vector<float>> embed(const Tensor<T>& images) const;

  /// Clamps constrained values (GeM exponents) after an optimizer step.
  void apply_constraints();

  ParameterStore<T>& parameters() { return store_; }
  const ParameterStore<T>& parameters() const { return store_; }
  const ModelConfig& config() const { return config_; }
  Parameter<T>& log_temperature() { return *log_temperature_; }

  const Backbone<T>& backbone() const { return *backbone_; }
  const LocalBranch<T>* local_branch() const { return local_.get(); }
  const GlobalBranch<T>* global_branch() const { return global_.get(); }
  FrequencyBranch<T>* frequency_branch() { return frequency_.get(); }
  const FrequencyBranch<T>* frequency_branch() const { return frequency_.get(); }

 private:
  ModelConfig config_;
  ParameterStore<T> store_;
  std::unique_ptr<Backbone<T>> backbone_;
  std::unique_ptr<LocalBranch<T>> local_;
  std::unique_ptr<GlobalBranch<T>> global_;
  std::unique_ptr<FrequencyBranch<T>> frequency_;
  nn::GemExponent<T> local_pool_;
  nn::GemExponent<T> frequency_pool_;
  Parameter<T>* log_temperature_ = nullptr;
};

}  // namespace sfde
