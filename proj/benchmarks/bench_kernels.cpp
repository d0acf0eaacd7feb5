#include <benchmark/benchmark.h>

#include "sfde/model.hpp"
#include "sfde/ops.hpp"
#include "sfde/spectral.hpp"

using namespace sfde;

namespace {

Tensor<float> noise(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t(std::move(shape));
  for (auto& v : t.values()) v = float(rng.normal());
  return t;
}

void BM_Conv2d3x3(benchmark::State& state) {
  const auto c = std::size_t(state.range(0));
  const auto x = noise({2, c, 32, 32}, 1), w = noise({c, c, 3, 3}, 2);
  for (auto _ : state) {
    Tape<float> tape;
    benchmark::DoNotOptimize(ops::conv2d(tape.constant(x), tape.constant(w), {1, 1, 1, 1}).value().data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * 32 * 32 * std::int64_t(c * c * 9));
}
BENCHMARK(BM_Conv2d3x3)->Arg(8)->Arg(32);

void BM_DepthwiseConv7x7(benchmark::State& state) {
  const auto x = noise({2, 64, 16, 16}, 3), w = noise({64, 1, 7, 7}, 4);
  for (auto _ : state) {
    Tape<float> tape;
    benchmark::DoNotOptimize(ops::conv2d(tape.constant(x), tape.constant(w), {1, 3, 1, 64}).value().data());
  }
}
BENCHMARK(BM_DepthwiseConv7x7);

void BM_Rfft2RoundTrip(benchmark::State& state) {
  const auto n = std::size_t(state.range(0));
  const auto x = noise({64, n, n}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(spectral::irfft2(spectral::rfft2(x)).data());
}
BENCHMARK(BM_Rfft2RoundTrip)->Arg(4)->Arg(7)->Arg(16)->Arg(32);

void BM_Attention(benchmark::State& state) {
  const auto seq = std::size_t(state.range(0));
  const auto q = noise({2 * seq, 64}, 6), k = noise({2 * seq, 64}, 7), v = noise({2 * seq, 64}, 8);
  for (auto _ : state) {
    Tape<float> tape;
    benchmark::DoNotOptimize(ops::attention(tape.constant(q), tape.constant(k), tape.constant(v), 2, 4).value().data());
  }
}
BENCHMARK(BM_Attention)->Arg(12)->Arg(72);

void BM_ModelEmbed(benchmark::State& state) {
  ModelConfig config;
  config.backbone = {.stage_channels = {8, 16, 32, 64}, .blocks_per_stage = 1, .input_size = 128};
  config.embedding_dim = 64;
  SfdeModel<float> model(config, 9);
  const auto images = noise({4, 3, 128, 128}, 10);
  for (auto _ : state) benchmark::DoNotOptimize(model.embed(images).data());
  state.SetItemsProcessed(state.iterations() * 4);
}
BENCHMARK(BM_ModelEmbed)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  ModelConfig config;
  config.backbone = {.stage_channels = {8, 16, 32, 64}, .blocks_per_stage = 1, .input_size = 128};
  config.embedding_dim = 64;
  config.num_classes = 8;
  SfdeModel<float> model(config, 11);
  const auto images = noise({16, 3, 128, 128}, 12);
  const std::vector<std::size_t> labels{0, 1, 2, 3, 4, 5, 6, 7};
  Rng dropout(13);
  for (auto _ : state) {
    model.parameters().zero_grads();
    Tape<float> tape;
    Context<float> ctx{tape, ops::Mode::Train, &dropout};
    auto loss = model.loss(ctx, tape.constant(images), labels, {});
    tape.backward(loss.total);
    benchmark::DoNotOptimize(loss.parts.classification);
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
