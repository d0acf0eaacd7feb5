#include <gtest/gtest.h>

#include "oracles.hpp"
#include "sfde/gradcheck.hpp"
#include "sfde/ops.hpp"
#include "sfde/spectral.hpp"

using namespace sfde;
using V = std::vector<Var<double>>;

namespace {

constexpr double kTolerance = 1e-4;

// Weighted sum with fixed random coefficients so every output entry matters.
Var<double> probe_sum(Var<double> y, std::uint64_t seed = 77) {
  Rng rng(seed);
  Tape<double>& t = y.tape();
  return ops::sum(ops::mul(y, t.constant(oracle::random_tensor(y.shape(), rng))));
}

void expect_gradients(const std::vector<Tensor<double>>& inputs, const gradcheck::InputLoss& loss) {
  for (const auto& c : gradcheck::check_inputs(inputs, loss)) {
    EXPECT_LT(c.relative_error(), kTolerance) << c.name << " |a|=" << c.analytic_norm << " |n|=" << c.numeric_norm;
  }
}

Tensor<double> away_from_zero(Shape s, Rng& rng) {
  auto t = oracle::random_tensor(std::move(s), rng, 0.1, 1.0);
  for (auto& v : t.values())
    if (rng.bernoulli(0.5)) v = -v;
  return t;
}

ParameterStore<double>& bn_store() {
  static ParameterStore<double> store;
  if (!store.contains("rm")) {
    store.add("rm", Tensor<double>({3}), ParamRole::Buffer);
    store.add("rv", Tensor<double>({3}, 1.0), ParamRole::Buffer);
  }
  return store;
}

}  // namespace

TEST(KernelGradients, Conv2dDilatedStridedGrouped) {
  Rng rng(1);
  expect_gradients({oracle::random_tensor({2, 4, 7, 6}, rng), oracle::random_tensor({6, 2, 3, 3}, rng),
                    oracle::random_tensor({6}, rng)},
                   [](Tape<double>&, const V& v) { return probe_sum(ops::conv2d(v[0], v[1], v[2], {2, 2, 2, 2})); });
  expect_gradients({oracle::random_tensor({2, 3, 5, 5}, rng), oracle::random_tensor({3, 1, 3, 3}, rng)},
                   [](Tape<double>&, const V& v) { return probe_sum(ops::conv2d(v[0], v[1], {1, 1, 1, 3})); });
  expect_gradients({oracle::random_tensor({2, 3, 8, 8}, rng), oracle::random_tensor({4, 3, 4, 4}, rng)},
                   [](Tape<double>&, const V& v) { return probe_sum(ops::conv2d(v[0], v[1], {4, 0, 1, 1})); });
}

TEST(KernelGradients, BatchNormTrainAndEval) {
  Rng rng(2);
  for (auto mode : {ops::Mode::Train, ops::Mode::Eval}) {
    expect_gradients({oracle::random_tensor({4, 3, 2, 2}, rng), oracle::random_tensor({3}, rng, 0.5, 1.5),
                      oracle::random_tensor({3}, rng)},
                     [mode](Tape<double>&, const V& v) {
                       auto& s = bn_store();
                       return probe_sum(ops::batch_norm(v[0], v[1], v[2], s.get("rm"), s.get("rv"), mode));
                     });
  }
  expect_gradients({oracle::random_tensor({5, 3}, rng), oracle::random_tensor({3}, rng, 0.5, 1.5), oracle::random_tensor({3}, rng)},
                   [](Tape<double>&, const V& v) {
                     auto& s = bn_store();
                     return probe_sum(ops::batch_norm(v[0], v[1], v[2], s.get("rm"), s.get("rv"), ops::Mode::Train));
                   });
}

TEST(KernelGradients, Activations) {
  Rng rng(3);
  const auto x = away_from_zero({3, 5}, rng);
  expect_gradients({x}, [](Tape<double>&, const V& v) { return probe_sum(ops::relu(v[0])); });
  expect_gradients({oracle::random_tensor({3, 5}, rng, -3, 3)}, [](Tape<double>&, const V& v) { return probe_sum(ops::gelu(v[0])); });
  expect_gradients({oracle::random_tensor({3, 5}, rng, -3, 3)}, [](Tape<double>&, const V& v) { return probe_sum(ops::sigmoid(v[0])); });
  expect_gradients({oracle::random_tensor({3, 5}, rng, -3, 3)}, [](Tape<double>&, const V& v) { return probe_sum(ops::softplus(v[0])); });
  expect_gradients({oracle::random_tensor({3, 5}, rng, -3, 3)}, [](Tape<double>&, const V& v) { return probe_sum(ops::softmax(v[0])); });
}

TEST(KernelGradients, BroadcastArithmetic) {
  Rng rng(4);
  const std::vector<Tensor<double>> in{oracle::random_tensor({2, 3, 4, 4}, rng), oracle::random_tensor({2, 3, 1, 1}, rng, 0.5, 1.5)};
  expect_gradients(in, [](Tape<double>&, const V& v) { return probe_sum(ops::add(v[0], v[1])); });
  expect_gradients(in, [](Tape<double>&, const V& v) { return probe_sum(ops::sub(v[1], v[0])); });
  expect_gradients(in, [](Tape<double>&, const V& v) { return probe_sum(ops::mul(v[0], v[1])); });
  expect_gradients({oracle::random_tensor({2, 1, 3, 3}, rng), oracle::random_tensor({1, 4, 3, 3}, rng)},
                   [](Tape<double>&, const V& v) { return probe_sum(ops::mul(v[0], v[1])); });
  expect_gradients({oracle::random_tensor({3, 4}, rng)}, [](Tape<double>&, const V& v) {
    return probe_sum(ops::one_minus(ops::add_scalar(ops::scale(v[0], -2.5), 0.3)));
  });
  expect_gradients({oracle::random_tensor({2, 3, 2, 2}, rng), oracle::random_tensor({4}, rng)},
                   [](Tape<double>&, const V& v) { return probe_sum(ops::scale_by_element(v[0], v[1], 2)); });
}

TEST(KernelGradients, LayoutOps) {
  Rng rng(5);
  expect_gradients({oracle::random_tensor({2, 2, 3, 3}, rng), oracle::random_tensor({2, 3, 3, 3}, rng)},
                   [](Tape<double>&, const V& v) {
                     auto cat = ops::concat_channels<double>({v[0], v[1]});
                     return probe_sum(ops::slice_channels(cat, 1, 3));
                   });
  expect_gradients({oracle::random_tensor({2, 3, 2, 2}, rng), oracle::random_tensor({3, 3, 2, 2}, rng)},
                   [](Tape<double>&, const V& v) {
                     auto cat = ops::concat_batch<double>({v[0], v[1]});
                     return probe_sum(ops::slice_batch(cat, 1, 3));
                   });
  expect_gradients({oracle::random_tensor({2, 3, 5}, rng)}, [](Tape<double>&, const V& v) {
    return probe_sum(ops::reshape(ops::transpose_last2(v[0]), {2, 15}));
  });
}

TEST(KernelGradients, PoolingAndResampling) {
  Rng rng(6);
  expect_gradients({oracle::random_tensor({2, 2, 5, 7}, rng)},
                   [](Tape<double>&, const V& v) { return probe_sum(ops::adaptive_avg_pool(v[0], 3, 4)); });
  expect_gradients({oracle::random_tensor({2, 2, 5, 7}, rng)},
                   [](Tape<double>&, const V& v) { return probe_sum(ops::global_avg_pool(v[0])); });
  expect_gradients({oracle::random_tensor({2, 2, 2, 3}, rng)},
                   [](Tape<double>&, const V& v) { return probe_sum(ops::upsample_bilinear(v[0], 5, 7)); });
  expect_gradients({oracle::random_tensor({2, 2, 3, 3}, rng, 0.1, 2.0), Tensor<double>({1}, 3.2)},
                   [](Tape<double>&, const V& v) { return probe_sum(ops::gem_pool(v[0], v[1])); });
}

TEST(KernelGradients, LinearAndAttention) {
  Rng rng(7);
  expect_gradients({oracle::random_tensor({4, 5}, rng), oracle::random_tensor({3, 5}, rng), oracle::random_tensor({3}, rng)},
                   [](Tape<double>&, const V& v) { return probe_sum(ops::linear(v[0], v[1], v[2])); });
  std::vector<Tensor<double>> in{oracle::random_tensor({2, 3, 4}, rng)};
  for (int i = 0; i < 4; ++i) {
    in.push_back(oracle::random_tensor({4, 4}, rng));
    in.push_back(oracle::random_tensor({4}, rng));
  }
  expect_gradients(in, [](Tape<double>&, const V& v) {
    ops::AttentionWeights<double> w{v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]};
    return probe_sum(ops::multi_head_attention(v[0], w, 2));
  });
}

TEST(KernelGradients, ReductionsAndLosses) {
  Rng rng(8);
  expect_gradients({oracle::random_tensor({4, 6}, rng)}, [](Tape<double>&, const V& v) { return probe_sum(ops::l2_normalize_rows(v[0])); });
  expect_gradients({oracle::random_tensor({4, 6}, rng)}, [](Tape<double>&, const V& v) { return ops::mean(v[0]); });
  expect_gradients({Tensor<double>({1}, 0.7), Tensor<double>({1}, -1.2)}, [](Tape<double>&, const V& v) {
    return ops::weighted_sum<double>({v[0], v[1]}, {0.1, 1.3});
  });
  const std::vector<std::size_t> labels{2, 0, 1};
  expect_gradients({oracle::random_tensor({3, 4}, rng, -2, 2)}, [&](Tape<double>&, const V& v) {
    return ops::cross_entropy(v[0], labels);
  });
  expect_gradients({oracle::random_tensor({4, 8}, rng), oracle::random_tensor({4, 8}, rng), Tensor<double>({1}, std::log(0.3))},
                   [](Tape<double>&, const V& v) {
                     return ops::info_nce(ops::l2_normalize_rows(v[0]), ops::l2_normalize_rows(v[1]), v[2]);
                   });
}

TEST(KernelGradients, DropoutWithFixedMask) {
  Rng rng(9);
  expect_gradients({oracle::random_tensor({3, 8}, rng)}, [](Tape<double>&, const V& v) {
    Rng mask(4);
    return probe_sum(ops::dropout(v[0], 0.3, ops::Mode::Train, mask));
  });
}

TEST(KernelGradients, SpectralOps) {
  Rng rng(10);
  for (std::size_t w : {4u, 5u, 6u}) {
    expect_gradients({oracle::random_tensor({2, 2, 4, w}, rng)},
                     [](Tape<double>&, const V& v) { return probe_sum(spectral::rfft2(v[0])); });
    const std::size_t wh = spectral::half_width(w);
    expect_gradients({oracle::random_tensor({1, 2, 4, wh, 2}, rng)}, [w](Tape<double>&, const V& v) {
      return probe_sum(spectral::irfft2(v[0], w));
    });
    expect_gradients({oracle::random_tensor({1, 2, 4, wh, 2}, rng)},
                     [](Tape<double>&, const V& v) { return probe_sum(spectral::amplitude(v[0])); });
    expect_gradients({oracle::random_tensor({1, 2, 4, wh, 2}, rng)},
                     [](Tape<double>&, const V& v) { return probe_sum(spectral::phase(v[0])); });
    expect_gradients({oracle::random_tensor({1, 2, 4, wh}, rng, 0.2, 2.0), oracle::random_tensor({1, 2, 4, wh}, rng, -3, 3)},
                     [](Tape<double>&, const V& v) { return probe_sum(spectral::polar_recompose(v[0], v[1])); });
  }
}
