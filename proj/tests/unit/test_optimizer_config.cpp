#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "scratch.hpp"
#include "sfde/config.hpp"
#include "sfde/optimizer.hpp"
#include "sfde/retrieval.hpp"

using namespace sfde;

namespace {

// Two-step hand evaluation of the update for one scalar.
double adamw_reference(double w, const std::vector<double>& grads, double lr, double wd, bool decays) {
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double m = 0.0, v = 0.0;
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    m = b1 * m + (1 - b1) * grads[t - 1];
    v = b2 * v + (1 - b2) * grads[t - 1] * grads[t - 1];
    if (decays) w -= lr * wd * w;
    w -= lr * (m / (1 - std::pow(b1, double(t)))) / (std::sqrt(v / (1 - std::pow(b2, double(t)))) + eps);
  }
  return w;
}

}  // namespace

TEST(AdamW, MatchesHandComputedUpdates) {
  ParameterStore<double> store;
  auto& w = store.add("w", Tensor<double>({2}, std::vector<double>{1.5, -0.5}), ParamRole::Weight);
  auto& b = store.add("b", Tensor<double>({1}, 0.25), ParamRole::Bias);
  auto& buf = store.add("buf", Tensor<double>({1}, 7.0), ParamRole::Buffer);
  AdamW<double> opt(store, {.learning_rate = 0.01, .weight_decay = 0.05});
  const std::vector<double> gw0{0.3, -2.0}, gw1{-0.1, 0.5}, gb{1.0, 1.0};
  for (int step = 0; step < 2; ++step) {
    w.grad[0] = step ? gw1[0] : gw0[0];
    w.grad[1] = step ? gw1[1] : gw0[1];
    b.grad[0] = gb[step];
    buf.grad[0] = 100.0;
    opt.step(0.01);
  }
  EXPECT_NEAR(w.value[0], adamw_reference(1.5, {0.3, -0.1}, 0.01, 0.05, true), 1e-14);
  EXPECT_NEAR(w.value[1], adamw_reference(-0.5, {-2.0, 0.5}, 0.01, 0.05, true), 1e-14);
  EXPECT_NEAR(b.value[0], adamw_reference(0.25, {1.0, 1.0}, 0.01, 0.05, false), 1e-14);
  EXPECT_EQ(buf.value[0], 7.0);
  EXPECT_EQ(opt.steps_taken(), 2u);
  EXPECT_NE(opt.describe().find("wd=0.05"), std::string::npos);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  ParameterStore<double> store;
  auto& b = store.add("b", Tensor<double>({3}, std::vector<double>{0, 0, 0}), ParamRole::Bias);
  b.grad[0] = 5.0;
  b.grad[1] = -1e-3;
  AdamW<double> opt(store, {});
  opt.step(1e-3);
  EXPECT_NEAR(b.value[0], -1e-3, 1e-10);
  EXPECT_NEAR(b.value[1], 1e-3, 1e-8);
  EXPECT_EQ(b.value[2], 0.0);
}

TEST(AdamW, RejectsInvalidHyperparameters) {
  ParameterStore<double> store;
  EXPECT_THROW(AdamW<double>(store, {.learning_rate = 0.0}), ConfigError);
  EXPECT_THROW(AdamW<double>(store, {.beta1 = 1.0}), ConfigError);
  EXPECT_THROW(AdamW<double>(store, {.epsilon = 0.0}), ConfigError);
  EXPECT_THROW(AdamW<double>(store, {.weight_decay = -1.0}), ConfigError);
}

TEST(Schedule, WarmupThenCosine) {
  const ScheduleConfig s{.total_steps = 200, .warmup_fraction = 0.1, .peak = 1e-3, .floor = 0.0};
  for (std::size_t t = 0; t <= 200; ++t) {
    const double expected = t < 20 ? 1e-3 * double(t) / 20.0
                                   : 0.5e-3 * (1.0 + std::cos(std::numbers::pi * double(t - 20) / 180.0));
    EXPECT_NEAR(scheduled_rate(s, t), expected, 1e-15) << t;
  }
  EXPECT_EQ(scheduled_rate(s, 0), 0.0);
  EXPECT_EQ(scheduled_rate(s, 20), 1e-3);
  EXPECT_NEAR(scheduled_rate(s, 200), 0.0, 1e-18);
  EXPECT_NEAR(scheduled_rate({.total_steps = 10, .warmup_fraction = 0.0, .peak = 2.0, .floor = 0.5}, 10), 0.5, 1e-15);
}

TEST(Schedule, NonIncreasingAfterWarmup) {
  const ScheduleConfig s{.total_steps = 97, .warmup_fraction = 0.13, .peak = 3e-4, .floor = 1e-5};
  double previous = scheduled_rate(s, 12);
  for (std::size_t t = 13; t <= 97; ++t) {
    const double r = scheduled_rate(s, t);
    EXPECT_LE(r, previous + 1e-18);
    EXPECT_GE(r, s.floor - 1e-18);
    previous = r;
  }
}

TEST(Config, DefaultsMatchTrainingRecipe) {
  const RunConfig c;
  EXPECT_EQ(c.optimizer.learning_rate, 1e-3);
  EXPECT_EQ(c.optimizer.weight_decay, 0.05);
  EXPECT_EQ(c.warmup_fraction, 0.1);
  EXPECT_EQ(c.loss.classification, 0.1);
  EXPECT_EQ(c.loss.frequency_alignment, 1.3);
  EXPECT_EQ(c.model.backbone.input_size, 128u);
}

TEST(Config, RoundTripsThroughText) {
  RunConfig c;
  c.model.backbone.stage_channels = {8, 16, 32, 64};
  c.model.embedding_dim = 48;
  c.model.branches.frequency = false;
  c.loss.frequency_alignment = 0.0;
  c.optimizer.learning_rate = 3.3e-4;
  c.train.seed = 123456789012345ULL;
  c.train.eval_every = 7;
  c.lr_floor = 1e-6;
  const auto text = serialize_config(c);
  const auto back = parse_config(text);
  EXPECT_EQ(serialize_config(back), text);
  EXPECT_EQ(back.model.backbone.stage_channels, c.model.backbone.stage_channels);
  EXPECT_EQ(back.optimizer.learning_rate, 3.3e-4);
  EXPECT_EQ(back.train.seed, c.train.seed);
  EXPECT_FALSE(back.model.branches.frequency);
  testutil::ScratchDir dir;
  retrieval::write_file_atomic(dir / "run.cfg", text);
  EXPECT_EQ(serialize_config(load_config(dir / "run.cfg")), text);
}

TEST(Config, ParsesCommentsAndWhitespace) {
  const auto c = parse_config("# toy\n[model]\n  embedding_dim = 32  \n\n[train]\nsteps=9 # short\n");
  EXPECT_EQ(c.model.embedding_dim, 32u);
  EXPECT_EQ(c.train.steps, 9u);
}

TEST(Config, ErrorsNameTheLine) {
  auto message = [](const char* text) {
    try {
      parse_config(text, "run.cfg");
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  const auto unknown = message("[model]\nheads = 2\ncolour = red\n");
  EXPECT_NE(unknown.find("run.cfg:3"), std::string::npos) << unknown;
  EXPECT_NE(unknown.find("colour"), std::string::npos) << unknown;
  EXPECT_NE(message("[gpu]\n").find("run.cfg:1"), std::string::npos);
  EXPECT_NE(message("steps = 3\n").find("outside"), std::string::npos);
  EXPECT_NE(message("[train]\nsteps = many\n").find("run.cfg:2"), std::string::npos);
  EXPECT_FALSE(message("[model]\nstage_channels = 1,2,3\n").empty());
  EXPECT_FALSE(message("[train]\npairs_per_batch = 1\n").empty());
  EXPECT_FALSE(message("[loss]\nclassification = -1\n").empty());
}
