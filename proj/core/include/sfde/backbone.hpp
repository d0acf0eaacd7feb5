#pragma once

#include <array>
#include <vector>

#include "sfde/nn.hpp"

namespace sfde {

struct BackboneConfig {
  std::array<std::size_t, 4> stage_channels{16, 32, 64, 128};
  std::size_t blocks_per_stage = 2;
  std::size_t input_size = 64;

  static constexpr std::size_t kTotalStride = 32;

  std::size_t out_channels() const { return stage_channels.back(); }
  std::size_t out_extent() const { return input_size / kTotalStride; }
  void validate() const;
};

/// Four-stage convolutional feature extractor shared by both views: a 4x4
/// stride-4 stem, stride-2 downsampling between stages, and depthwise 7x7
/// residual blocks with a 4x pointwise expansion.
template <typename T>
class Backbone {
 public:
  Backbone(ParameterStore<T>& store, const BackboneConfig& config, Rng& rng);

  /// images [N, 3, S, S] -> features [N, C, S/32, S/32]
  Var<T> forward(const Context<T>& ctx, Var<T> images) const;

  const BackboneConfig& config() const { return config_; }

 private:
  struct Block {
    nn::Conv2d<T> depthwise;
    nn::BatchNorm<T> norm;
    nn::Conv2d<T> expand;
    nn::Conv2d<T> project;
  };
  struct Stage {
    nn::BatchNorm<T> down_norm;
    nn::Conv2d<T> down;
    std::vector<Block> blocks;
  };

  BackboneConfig config_;
  nn::Conv2d<T> stem_;
  nn::BatchNorm<T> stem_norm_;
  std::vector<Stage> stages_;
};

}  // namespace sfde
