#include "sfde/model.hpp"

#include <cmath>
#include <string>

#include "sfde/retrieval.hpp"

namespace sfde {

std::size_t ModelConfig::descriptor_dim() const {
  return (branches.global ? embedding_dim : 0) + (branches.local ? channels() : 0) +
         (branches.frequency ? channels() : 0);
}

void ModelConfig::validate() const {
  backbone.validate();
  if (!branches.local && !branches.global && !branches.frequency) {
    throw ConfigError("at least one of the local, global and frequency branches must be enabled");
  }
  const std::size_t c = channels();
  const std::size_t extent = backbone.out_extent();
  if (branches.local) {
    if (c % 4 != 0) throw ConfigError("local branch needs C divisible by 4, got C=" + std::to_string(c));
    if (extent < LocalBranch<float>::kLevels) {
      throw ConfigError("local branch pyramid needs a feature map of at least 4x4; input_size " +
                        std::to_string(backbone.input_size) + " gives " + std::to_string(extent) + "x" +
                        std::to_string(extent) + " (use input_size >= 128)");
    }
  }
  if (branches.frequency) {
    if (c % 4 != 0) throw ConfigError("frequency branch needs C divisible by 4, got C=" + std::to_string(c));
    if (heads == 0 || c % heads != 0) {
      throw ConfigError("attention heads " + std::to_string(heads) + " must divide C=" + std::to_string(c));
    }
    if (extent < 2 || extent % 2 != 0) {
      throw ConfigError("frequency branch needs an even feature width of at least 2; input_size " +
                        std::to_string(backbone.input_size) + " gives " + std::to_string(extent));
    }
    if (extent * (extent / 2 + 1) > token_budget) {
      throw ConfigError("spectral token count exceeds the attention budget; use a smaller input size");
    }
  }
  if (branches.global && embedding_dim == 0) throw ConfigError("embedding_dim must be positive");
  if (!(global_dropout >= 0.0 && global_dropout < 1.0) || !(fusion_dropout >= 0.0 && fusion_dropout < 1.0)) {
    throw ConfigError("dropout rates must lie in [0, 1)");
  }
}

template <typename T>
SfdeModel<T>::SfdeModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t c = config_.channels();
  backbone_ = std::make_unique<Backbone<T>>(store_, config_.backbone, rng);
  if (config_.branches.local) {
    local_ = std::make_unique<LocalBranch<T>>(store_, c, rng);
    local_pool_ = nn::GemExponent<T>(store_, "local.output_gem.p");
  }
  if (config_.branches.global) {
    global_ = std::make_unique<GlobalBranch<T>>(store_, c, config_.embedding_dim, config_.num_classes,
                                                config_.global_dropout, rng);
  }
  if (config_.branches.frequency) {
    frequency_ = std::make_unique<FrequencyBranch<T>>(store_, c, config_.heads, config_.fusion_dropout,
                                                      config_.token_budget, rng);
    frequency_pool_ = nn::GemExponent<T>(store_, "frequency.output_gem.p");
  }
  log_temperature_ = &store_.add("loss.log_temperature", Tensor<T>({1}, T(std::log(losses::kInitialTemperature))),
                                 ParamRole::Bias);
}

template <typename T>
typename SfdeModel<T>::Outputs SfdeModel<T>::forward(const Context<T>& ctx, Var<T> images,
                                                     FrequencyTrace<T>* trace) const {
  Outputs out;
  out.features = backbone_->forward(ctx, images);
  if (global_) out.global = global_->forward(ctx, out.features);
  if (local_) out.local = local_->forward(ctx, out.features);
  if (frequency_) out.frequency = frequency_->forward(ctx, out.features, trace);
  return out;
}

template <typename T>
typename SfdeModel<T>::Loss SfdeModel<T>::loss(const Context<T>& ctx, Var<T> images,
                                               std::span<const std::size_t> labels,
                                               const losses::LossWeights& weights) const {
  weights.validate();
  const std::size_t rows = images.dim(0);
  if (rows % 2 != 0 || labels.size() * 2 != rows) {
    throw ShapeError("paired batch: " + std::to_string(rows) + " images do not match " +
                     std::to_string(labels.size()) + " drone/satellite pairs");
  }
  const std::size_t n = labels.size();
  Outputs out = forward(ctx, images);
  std::vector<Var<T>> terms;
  std::vector<double> coeffs;
  Loss result;
  if (out.global.logits.valid()) {
    std::vector<std::size_t> both(labels.begin(), labels.end());
    both.insert(both.end(), labels.begin(), labels.end());
    Var<T> ce = losses::classification(out.global.logits, std::span<const std::size_t>(both));
    result.parts.classification = ce.value()[0];
    terms.push_back(ce);
    coeffs.push_back(weights.classification);
  }
  Var<T> temp = ctx.bind(log_temperature_);
  auto contrast = [&](Var<T> maps, const nn::GemExponent<T>& pool, double w, double& part) {
    Var<T> v = losses::pooled_contrastive(ops::slice_batch(maps, 0, n), ops::slice_batch(maps, n, n),
                                          ctx.bind(pool.p), temp);
    part = v.value()[0];
    terms.push_back(v);
    coeffs.push_back(w);
  };
  if (out.local.valid()) contrast(out.local, local_pool_, weights.local_contrast, result.parts.local_contrast);
  if (out.frequency.valid()) {
    contrast(out.frequency, frequency_pool_, weights.frequency_alignment, result.parts.frequency_alignment);
  }
  result.total = ops::weighted_sum(terms, coeffs);
  return result;
}

template <typename T>
std::vector<std::vector<float>> SfdeModel<T>::embed(const Tensor<T>& images) const {
  Tape<T> tape;
  Context<T> ctx{tape, ops::Mode::Eval, nullptr};
  Outputs out = forward(ctx, tape.constant(images));
  const std::size_t n = images.dim(0);
  auto rows = [n](Var<T> v) {
    std::vector<std::vector<float>> r(n);
    if (!v.valid()) return r;
    const std::size_t d = v.value().size() / n;
    for (std::size_t i = 0; i < n; ++i) {
      r[i].assign(v.value().data() + i * d, v.value().data() + (i + 1) * d);
    }
    return r;
  };
  auto g = rows(out.global.embedding);
  auto l = rows(local_ ? ops::gem_pool(out.local, ctx.bind(local_pool_.p)) : Var<T>());
  auto f = rows(frequency_ ? ops::gem_pool(out.frequency, ctx.bind(frequency_pool_.p)) : Var<T>());
  std::vector<std::vector<float>> result(n);
  for (std::size_t i = 0; i < n; ++i) result[i] = retrieval::assemble_embedding(g[i], l[i], f[i]);
  return result;
}

template <typename T>
void SfdeModel<T>::apply_constraints() {
  if (local_) {
    local_->apply_constraints();
    local_pool_.clamp();
  }
  if (frequency_) frequency_pool_.clamp();
}

template class SfdeModel<float>;
template class SfdeModel<double>;

}  // namespace sfde
