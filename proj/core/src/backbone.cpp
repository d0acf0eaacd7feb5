#include "sfde/backbone.hpp"

#include <string>

namespace sfde {

void BackboneConfig::validate() const {
  if (input_size == 0 || input_size % kTotalStride != 0) {
    throw ConfigError("backbone input_size " + std::to_string(input_size) + " must be a positive multiple of 32");
  }
  for (auto c : stage_channels) {
    if (c == 0) throw ConfigError("backbone stage channels must be positive");
  }
  if (blocks_per_stage == 0) throw ConfigError("backbone needs at least one block per stage");
}

template <typename T>
Backbone<T>::Backbone(ParameterStore<T>& store, const BackboneConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const auto& ch = config_.stage_channels;
  stem_ = nn::Conv2d<T>(store, "backbone.stem.conv", 3, ch[0], 4, {.stride = 4}, true, rng);
  stem_norm_ = nn::BatchNorm<T>(store, "backbone.stem.norm", ch[0]);
  for (std::size_t s = 0; s < 4; ++s) {
    const std::string prefix = "backbone.stage" + std::to_string(s + 1);
    Stage stage;
    if (s > 0) {
      stage.down_norm = nn::BatchNorm<T>(store, prefix + ".down.norm", ch[s - 1]);
      stage.down = nn::Conv2d<T>(store, prefix + ".down.conv", ch[s - 1], ch[s], 2, {.stride = 2}, true, rng);
    }
    for (std::size_t b = 0; b < config_.blocks_per_stage; ++b) {
      const std::string bp = prefix + ".block" + std::to_string(b + 1);
      const std::size_t c = ch[s];
      Block blk;
      blk.depthwise = nn::Conv2d<T>(store, bp + ".dwconv", c, c, 7, {.padding = 3, .groups = c}, true, rng);
      blk.norm = nn::BatchNorm<T>(store, bp + ".norm", c);
      blk.expand = nn::Conv2d<T>(store, bp + ".expand", c, 4 * c, 1, {}, true, rng);
      blk.project = nn::Conv2d<T>(store, bp + ".project", 4 * c, c, 1, {}, true, rng);
      stage.blocks.push_back(blk);
    }
    stages_.push_back(std::move(stage));
  }
}

template <typename T>
Var<T> Backbone<T>::forward(const Context<T>& ctx, Var<T> images) const {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != 3 || s[2] != config_.input_size || s[3] != config_.input_size) {
    throw ShapeError("backbone stem: expected images [N x 3 x " + std::to_string(config_.input_size) + " x " +
                     std::to_string(config_.input_size) + "], got " + to_string(s));
  }
  Var<T> x = stem_norm_(ctx, stem_(ctx, images));
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const Stage& stage = stages_[i];
    if (i > 0) x = stage.down(ctx, stage.down_norm(ctx, x));
    for (const Block& blk : stage.blocks) {
      Var<T> y = blk.norm(ctx, blk.depthwise(ctx, x));
      y = blk.project(ctx, ops::gelu(blk.expand(ctx, y)));
      x = ops::add(x, y);
    }
  }
  return x;
}

template class Backbone<float>;
template class Backbone<double>;

}  // namespace sfde
