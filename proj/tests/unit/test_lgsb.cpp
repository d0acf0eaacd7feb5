#include <gtest/gtest.h>

#include <numeric>

#include "oracles.hpp"
#include "sfde/lgsb.hpp"

using namespace sfde;

TEST(ScaleFusion, EqualScalesGiveTwoThirdsForAnyGate) {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const auto x = oracle::random_tensor({2, 4, 3, 3}, rng, -4.0, 4.0);
    const auto gate = oracle::random_tensor({2, 4, 3, 3}, rng, 0.0, 1.0);
    Tape<double> tape;
    const auto v = tape.constant(x);
    const auto y = fuse_scales<double>({v, v, v}, tape.constant(gate)).value();
    for (std::size_t i = 0; i < x.size(); ++i) ASSERT_NEAR(y[i], 2.0 / 3.0 * x[i], 1e-6);
  }
}

TEST(ScaleFusion, ExtremeGatesSelectOneScale) {
  Rng rng(13);
  const auto a = oracle::random_tensor({1, 1, 2, 2}, rng), b = oracle::random_tensor({1, 1, 2, 2}, rng),
             c = oracle::random_tensor({1, 1, 2, 2}, rng);
  Tape<double> tape;
  const ScaleTriple<double> t{tape.constant(a), tape.constant(b), tape.constant(c)};
  const auto ones = fuse_scales<double>(t, tape.constant(Tensor<double>({1, 1, 2, 2}, 1.0))).value();
  const auto zeros = fuse_scales<double>(t, tape.constant(Tensor<double>({1, 1, 2, 2}))).value();
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(ones[i], (a[i] + b[i]) / 3.0, 1e-12);
    EXPECT_NEAR(zeros[i], (b[i] + c[i]) / 3.0, 1e-12);
  }
}

TEST(LocalBranch, PreservesFeatureShape) {
  Rng rng(14);
  ParameterStore<double> store;
  LocalBranch<double> branch(store, 8, rng);
  Tape<double> tape;
  Context<double> ctx{tape, ops::Mode::Eval, nullptr};
  const auto f = tape.constant(oracle::random_tensor({2, 8, 4, 4}, rng));
  const auto split = branch.multiscale_split(ctx, f);
  EXPECT_EQ(split.fine.shape(), (Shape{2, 2, 4, 4}));
  EXPECT_EQ(split.coarse.shape(), (Shape{2, 2, 4, 4}));
  const auto fused = branch.interaction_fuse(ctx, split);
  EXPECT_EQ(fused.shape(), (Shape{2, 2, 4, 4}));
  const auto levels = branch.pyramid_levels(ctx, fused);
  ASSERT_EQ(levels.size(), LocalBranch<double>::kLevels);
  for (const auto& l : levels) EXPECT_EQ(l.shape(), (Shape{2, 2, 4, 4}));
  EXPECT_EQ(branch.pyramid_enhance(ctx, fused).shape(), (Shape{2, 2, 4, 4}));
  EXPECT_EQ(branch.forward(ctx, f).shape(), (Shape{2, 8, 4, 4}));
}

TEST(LocalBranch, LevelWeightsFormSimplex) {
  Rng rng(15);
  ParameterStore<double> store;
  LocalBranch<double> branch(store, 4, rng);
  for (int trial = 0; trial < 20; ++trial) {
    for (auto& v : branch.level_logits().value.values()) v = rng.uniform(-6.0, 6.0);
    const auto w = branch.level_weights();
    EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-12);
    for (double x : w) EXPECT_GT(x, 0.0);
  }
}

TEST(LocalBranch, GemExponentClamped) {
  Rng rng(16);
  ParameterStore<double> store;
  LocalBranch<double> branch(store, 4, rng);
  branch.gem().p->value[0] = 0.2;
  branch.apply_constraints();
  EXPECT_EQ(branch.gem().p->value[0], 1.0);
  branch.gem().p->value[0] = 500.0;
  branch.apply_constraints();
  EXPECT_EQ(branch.gem().p->value[0], 128.0);
}

TEST(LocalBranch, RejectsInvalidInputs) {
  Rng rng(17);
  ParameterStore<double> store;
  EXPECT_THROW(LocalBranch<double>(store, 6, rng), ConfigError);
  ParameterStore<double> s2;
  LocalBranch<double> branch(s2, 4, rng);
  Tape<double> tape;
  Context<double> ctx{tape, ops::Mode::Eval, nullptr};
  EXPECT_THROW(branch.forward(ctx, tape.constant(Tensor<double>({1, 4, 2, 2}))), ConfigError);
  EXPECT_THROW(branch.forward(ctx, tape.constant(Tensor<double>({1, 8, 4, 4}))), ShapeError);
}
