#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "sfde/model.hpp"

using namespace sfde;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.backbone = {.stage_channels = {2, 4, 4, 8}, .blocks_per_stage = 1, .input_size = 128};
  c.embedding_dim = 16;
  c.num_classes = 3;
  c.heads = 2;
  return c;
}

double norm(const std::vector<float>& v) {
  double s = 0.0;
  for (float x : v) s += double(x) * x;
  return std::sqrt(s);
}

}  // namespace

TEST(ModelConfig, DescriptorLengthFollowsBranches) {
  auto c = tiny();
  EXPECT_EQ(c.descriptor_dim(), 16u + 8u + 8u);
  c.branches.frequency = false;
  EXPECT_EQ(c.descriptor_dim(), 16u + 8u);
  c.branches.local = false;
  EXPECT_EQ(c.descriptor_dim(), 16u);
  c.branches.global = false;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ModelConfig, RejectsIncompatibleGeometry) {
  auto c = tiny();
  c.backbone.input_size = 64;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny();
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny();
  c.backbone.stage_channels[3] = 6;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny();
  c.global_dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny();
  c.token_budget = 4;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Model, EmbeddingsAreUnitAndDeterministic) {
  Rng rng(51);
  const auto images = oracle::random_tensor<float>({3, 3, 128, 128}, rng);
  SfdeModel<float> a(tiny(), 5), b(tiny(), 5);
  const auto ea = a.embed(images), eb = b.embed(images);
  ASSERT_EQ(ea.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(ea[i].size(), tiny().descriptor_dim());
    EXPECT_NEAR(norm(ea[i]), 1.0, 1e-5);
    EXPECT_EQ(ea[i], eb[i]);
  }
}

TEST(Model, DisablingFrequencyShrinksDescriptorByChannels) {
  Rng rng(52);
  const auto images = oracle::random_tensor<float>({1, 3, 128, 128}, rng);
  auto c = tiny();
  c.branches.frequency = false;
  SfdeModel<float> m(c, 5);
  EXPECT_EQ(m.embed(images)[0].size(), tiny().descriptor_dim() - tiny().channels());
  EXPECT_EQ(m.frequency_branch(), nullptr);
  EXPECT_FALSE(m.parameters().contains("frequency.output_gem.p"));
}

TEST(Model, LossPartsCombineWithWeights) {
  Rng rng(53);
  SfdeModel<double> m(tiny(), 6);
  const auto images = oracle::random_tensor({4, 3, 128, 128}, rng);
  const std::vector<std::size_t> labels{0, 2};
  Rng drop(1);
  Tape<double> tape;
  Context<double> ctx{tape, ops::Mode::Train, &drop};
  const losses::LossWeights w{0.1, 1.0, 1.3};
  const auto loss = m.loss(ctx, tape.constant(images), labels, w);
  const auto& p = loss.parts;
  EXPECT_GT(p.classification, 0.0);
  EXPECT_GT(p.local_contrast, 0.0);
  EXPECT_GT(p.frequency_alignment, 0.0);
  EXPECT_NEAR(loss.total.value()[0], losses::total_loss(p, w), 1e-12);
  tape.backward(loss.total);
  EXPECT_NE(m.log_temperature().grad[0], 0.0);
}

TEST(Model, RejectsUnpairedBatch) {
  SfdeModel<double> m(tiny(), 6);
  Tape<double> tape;
  Context<double> ctx{tape, ops::Mode::Eval, nullptr};
  const std::vector<std::size_t> labels{0, 1};
  EXPECT_THROW(m.loss(ctx, tape.constant(Tensor<double>({3, 3, 128, 128})), labels, {}), ShapeError);
  EXPECT_THROW(m.loss(ctx, tape.constant(Tensor<double>({4, 3, 128, 128})), labels, {-1.0, 1.0, 1.0}), ConfigError);
}

TEST(Model, ConstraintsClampGemExponents) {
  SfdeModel<double> m(tiny(), 6);
  m.parameters().get("local.output_gem.p").value[0] = -3.0;
  m.parameters().get("frequency.output_gem.p").value[0] = 1e6;
  m.apply_constraints();
  EXPECT_EQ(m.parameters().get("local.output_gem.p").value[0], 1.0);
  EXPECT_EQ(m.parameters().get("frequency.output_gem.p").value[0], 128.0);
}

TEST(Model, TemperatureStartsAtDefault) {
  SfdeModel<double> m(tiny(), 6);
  EXPECT_NEAR(std::exp(m.log_temperature().value[0]), 0.07, 1e-12);
}
