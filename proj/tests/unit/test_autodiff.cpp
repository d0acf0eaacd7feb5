#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sfde/autodiff.hpp"
#include "sfde/ops.hpp"

using namespace sfde;

TEST(Tensor, DataLengthMatchesShape) {
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    Shape s{1 + rng.below(4), 1 + rng.below(4), 1 + rng.below(4)};
    Tensor<float> t(s);
    EXPECT_EQ(t.size(), s[0] * s[1] * s[2]);
  }
  EXPECT_THROW(Tensor<double>({2, 2}, std::vector<double>(3)), ShapeError);
  EXPECT_THROW(Tensor<double>({2, 0}), ShapeError);
}

TEST(Parameter, GradMatchesValueShapeAndZeroes) {
  ParameterStore<double> store;
  auto& p = store.add("w", Tensor<double>({3, 2}, 1.0), ParamRole::Weight);
  EXPECT_EQ(p.grad.shape(), p.value.shape());
  p.grad.fill(4.0);
  store.zero_grads();
  for (double g : p.grad.values()) EXPECT_EQ(g, 0.0);
  EXPECT_THROW(store.add("w", Tensor<double>({1}), ParamRole::Bias), ConfigError);
}

TEST(Tape, GradOfSumIsOnes) {
  Tape<double> tape;
  Rng rng(2);
  auto x = tape.variable(oracle::random_tensor({2, 3, 4}, rng));
  tape.backward(ops::sum(x));
  const auto grad = tape.grad(x);
  for (double g : grad.values()) EXPECT_EQ(g, 1.0);
}

TEST(Tape, HalfSquaredNormGradIsIdentity) {
  Tape<double> tape;
  Rng rng(3);
  const auto value = oracle::random_tensor({5, 3}, rng);
  auto x = tape.variable(value);
  tape.backward(ops::scale(ops::sum(ops::mul(x, x)), 0.5));
  const auto g = tape.grad(x);
  for (std::size_t i = 0; i < value.size(); ++i) EXPECT_DOUBLE_EQ(g[i], value[i]);
}

TEST(Tape, LossGradientIsOne) {
  Tape<double> tape;
  auto x = tape.variable(Tensor<double>({1}, 2.0));
  auto y = ops::scale(x, 3.0);
  tape.backward(y);
  EXPECT_EQ(tape.grad(y)[0], 1.0);
  EXPECT_EQ(tape.grad(x)[0], 3.0);
}

TEST(Tape, SecondBackwardIsRejected) {
  Tape<double> tape;
  auto x = tape.variable(Tensor<double>({2}, 1.0));
  auto loss = ops::sum(x);
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), ValidationError);
}

TEST(Tape, NonScalarLossIsRejected) {
  Tape<double> tape;
  auto x = tape.variable(Tensor<double>({2}, 1.0));
  EXPECT_THROW(tape.backward(x), ShapeError);
}

TEST(Tape, VisitsNodesInStrictReverseOrderOnce) {
  Tape<double> tape;
  Rng rng(4);
  auto x = tape.variable(oracle::random_tensor({3, 3}, rng));
  auto a = ops::relu(x);
  auto b = ops::mul(a, x);
  auto c = ops::add(b, a);
  tape.backward(ops::sum(c));
  const auto& trace = tape.backward_trace();
  ASSERT_FALSE(trace.empty());
  for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_GT(trace[i - 1], trace[i]);
  const std::set<std::size_t> unique(trace.begin(), trace.end());
  EXPECT_EQ(unique.size(), trace.size());
}

TEST(Tape, ParameterGradientsAccumulateAcrossUses) {
  ParameterStore<double> store;
  auto& p = store.add("p", Tensor<double>({2}, 1.5), ParamRole::Bias);
  Tape<double> tape;
  auto v1 = tape.parameter(p);
  auto v2 = tape.parameter(p);
  EXPECT_EQ(v1.id(), v2.id());
  tape.backward(ops::sum(ops::mul(v1, v2)));
  EXPECT_DOUBLE_EQ(p.grad[0], 3.0);
  EXPECT_DOUBLE_EQ(p.grad[1], 3.0);
}

TEST(Tape, BuffersReceiveNoGradient) {
  ParameterStore<double> store;
  auto& b = store.add("running", Tensor<double>({2}, 1.0), ParamRole::Buffer);
  Tape<double> tape;
  auto v = tape.parameter(b);
  EXPECT_FALSE(tape.requires_grad(v));
}
