#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "sfde/fsab.hpp"
#include "sfde/spectral.hpp"

using namespace sfde;

namespace {

struct Fixture {
  Rng rng{21};
  ParameterStore<double> store;
  FrequencyBranch<double> branch{store, 8, 2, 0.0, 4096, rng};
};

}  // namespace

TEST(FrequencyBranch, PinnedGatesWithoutAttentionReproduceInput) {
  Fixture fx;
  fx.branch.hooks().pin_gates = true;
  fx.branch.hooks().bypass_attention = true;
  for (int trial = 0; trial < 5; ++trial) {
    const auto f = oracle::random_tensor({2, 8, 4, 6}, fx.rng);
    Tape<double> tape;
    Context<double> ctx{tape, ops::Mode::Eval, nullptr};
    FrequencyTrace<double> trace;
    fx.branch.forward(ctx, tape.constant(f), &trace);
    EXPECT_LT(max_abs_diff(trace.weighted_amplitude.value(), trace.amplitude.value()), 1e-12);
    EXPECT_LT(max_abs_diff(trace.paths[2].value(), f), 1e-4);
  }
}

TEST(FrequencyBranch, GateRanges) {
  Fixture fx;
  const auto f = oracle::random_tensor({2, 8, 4, 4}, fx.rng, -3.0, 3.0);
  Tape<double> tape;
  Context<double> ctx{tape, ops::Mode::Eval, nullptr};
  FrequencyTrace<double> trace;
  const auto y = fx.branch.forward(ctx, tape.constant(f), &trace);
  EXPECT_EQ(y.shape(), (Shape{2, 8, 4, 4}));
  EXPECT_EQ(trace.gates.channel.shape(), (Shape{2, 8, 1, 1}));
  EXPECT_EQ(trace.gates.spatial.shape(), (Shape{2, 1, 4, 3}));
  for (double v : trace.gates.channel.value().values()) EXPECT_TRUE(v > 0.0 && v < 1.0);
  for (double v : trace.gates.spatial.value().values()) EXPECT_TRUE(v > 0.0 && v < 1.0);
  for (double v : trace.gates.calibration.value().values()) EXPECT_GT(v, 0.0);
  for (double v : trace.residual_gate.value().values()) EXPECT_TRUE(v > 0.0 && v < 1.0);
  for (double v : trace.weighted_amplitude.value().values()) EXPECT_GE(v, 0.0);
}

TEST(FrequencyBranch, PhaseOfInputIsKept) {
  Fixture fx;
  const auto f = oracle::random_tensor({1, 8, 4, 4}, fx.rng);
  Tape<double> tape;
  Context<double> ctx{tape, ops::Mode::Eval, nullptr};
  FrequencyTrace<double> trace;
  fx.branch.forward(ctx, tape.constant(f), &trace);
  const auto expected = spectral::phase(spectral::rfft2(f));
  EXPECT_LT(max_abs_diff(trace.phase.value(), expected), 1e-12);
  for (double v : trace.phase.value().values()) EXPECT_TRUE(v > -std::numbers::pi - 1e-12 && v <= std::numbers::pi);
}

TEST(FrequencyBranch, AttentionRowsAreStochastic) {
  Fixture fx;
  const auto f = oracle::random_tensor({2, 8, 4, 4}, fx.rng);
  Tape<double> tape;
  Context<double> ctx{tape, ops::Mode::Eval, nullptr};
  ops::AttentionProbe<double> probe;
  fx.branch.forward(ctx, tape.constant(f), nullptr, &probe);
  EXPECT_EQ(probe.batch, 2u);
  EXPECT_EQ(probe.heads, 2u);
  EXPECT_EQ(probe.seq, 12u);
  for (std::size_t r = 0; r < probe.weights.size() / probe.seq; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < probe.seq; ++c) s += probe.weights[r * probe.seq + c];
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(FrequencyBranch, CoordinateGridSpansUnitSquare) {
  const auto g = FrequencyBranch<double>::coordinate_grid(4, 3);
  EXPECT_EQ(g.shape(), (Shape{1, 2, 4, 3}));
  EXPECT_EQ(g[0], -1.0);
  EXPECT_EQ(g[3 * 3], 1.0);
  EXPECT_EQ(g[12], -1.0);
  EXPECT_EQ(g[12 + 2], 1.0);
}

TEST(FrequencyBranch, RejectsInvalidConfigurations) {
  Rng rng(22);
  ParameterStore<double> store;
  EXPECT_THROW(FrequencyBranch<double>(store, 6, 2, 0.0, 4096, rng), ConfigError);
  ParameterStore<double> s2;
  EXPECT_THROW(FrequencyBranch<double>(s2, 8, 3, 0.0, 4096, rng), ConfigError);
  ParameterStore<double> s3;
  FrequencyBranch<double> small(s3, 8, 2, 0.0, 8, rng);
  Tape<double> tape;
  Context<double> ctx{tape, ops::Mode::Eval, nullptr};
  EXPECT_THROW(small.forward(ctx, tape.constant(Tensor<double>({1, 8, 4, 4}))), ConfigError);
  EXPECT_THROW(small.forward(ctx, tape.constant(Tensor<double>({1, 8, 4, 3}))), ConfigError);
  EXPECT_THROW(small.forward(ctx, tape.constant(Tensor<double>({1, 4, 4, 4}))), ShapeError);
}
