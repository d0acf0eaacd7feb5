#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sfde/model.hpp"

namespace sfde::selftest {

struct Options {
  /// Doubles the inverse FFT scale for the duration of the run.
  bool corrupt_fft_normalization = false;
};

struct PropertyResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

std::vector<PropertyResult> run(const Options& options = {});

/// Fixed-width table, one row per property, ending with a summary line.
std::string format_table(const std::vector<PropertyResult>& results);

/// Gradient-check model: final stage of 8 channels on a 4 x 4 map, 64-bit.
ModelConfig gradient_toy_config();

/// Total loss of the gradient toy for a fixed batch; dropout masks
/// come from a freshly seeded stream on every call so repeated evaluations agree.
struct ToyProblem {
  ModelConfig config;
  Tensor<double> images;
  std::vector<std::size_t> labels;
  std::uint64_t dropout_seed = 99;
};
ToyProblem make_toy_problem(std::size_t pairs = 4, std::uint64_t seed = 5);
/// Redraws weights at unit activation scale (N(0, 1/fan_in)), norm scales in
/// [0.5, 1.5] and offsets in [-0.3, 0.3]; GeM exponents and the temperature keep
/// their values. Moves piecewise-linear kinks several steps away from typical
/// activations so central differences stay meaningful.
void spread_parameters(ParameterStore<double>& store, std::uint64_t seed);
Var<double> toy_loss(const SfdeModel<double>& model, const ToyProblem& problem, Tape<double>& tape);

}  // namespace sfde::selftest
