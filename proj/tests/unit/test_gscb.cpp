#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sfde/gscb.hpp"

using namespace sfde;

TEST(GlobalBranch, Shapes) {
  Rng rng(4);
  ParameterStore<double> store;
  GlobalBranch<double> head(store, 8, 16, 5, 0.5, rng);
  Tape<double> tape;
  Context<double> ctx{tape, ops::Mode::Eval, nullptr};
  const auto out = head.forward(ctx, tape.constant(oracle::random_tensor({3, 8, 4, 4}, rng)));
  EXPECT_EQ(out.embedding.shape(), (Shape{3, 16}));
  EXPECT_EQ(out.logits.shape(), (Shape{3, 5}));
  EXPECT_EQ(head.embedding_dim(), 16u);
}

TEST(GlobalBranch, EmbeddingOnlyHead) {
  Rng rng(4);
  ParameterStore<double> store;
  GlobalBranch<double> head(store, 8, 16, 0, 0.5, rng);
  Tape<double> tape;
  Context<double> ctx{tape, ops::Mode::Eval, nullptr};
  const auto out = head.forward(ctx, tape.constant(oracle::random_tensor({2, 8, 2, 2}, rng)));
  EXPECT_TRUE(out.embedding.valid());
  EXPECT_FALSE(out.logits.valid());
}

TEST(GlobalBranch, DropoutOnlyInTraining) {
  Rng init(4);
  ParameterStore<double> store;
  GlobalBranch<double> head(store, 8, 16, 5, 0.5, init);
  Rng data(5);
  const auto x = oracle::random_tensor({4, 8, 2, 2}, data);
  auto logits = [&](ops::Mode mode, std::uint64_t seed) {
    Rng rng(seed);
    Tape<double> tape;
    Context<double> ctx{tape, mode, &rng};
    return head.forward(ctx, tape.constant(x)).logits.value();
  };
  EXPECT_EQ(max_abs_diff(logits(ops::Mode::Eval, 1), logits(ops::Mode::Eval, 2)), 0.0);
  EXPECT_GT(max_abs_diff(logits(ops::Mode::Train, 1), logits(ops::Mode::Train, 2)), 0.0);
}

TEST(GlobalBranch, RejectsWrongChannels) {
  Rng rng(4);
  ParameterStore<double> store;
  GlobalBranch<double> head(store, 8, 16, 5, 0.5, rng);
  Tape<double> tape;
  Context<double> ctx{tape, ops::Mode::Eval, nullptr};
  EXPECT_THROW(head.forward(ctx, tape.constant(Tensor<double>({1, 4, 2, 2}))), ShapeError);
  ParameterStore<double> other;
  EXPECT_THROW(GlobalBranch<double>(other, 8, 0, 5, 0.5, rng), ConfigError);
}
