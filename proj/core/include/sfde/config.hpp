#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "sfde/losses.hpp"
#include "sfde/model.hpp"
#include "sfde/optimizer.hpp"

namespace sfde {

struct TrainSettings {
  std::size_t steps = 200;
  std::size_t pairs_per_batch = 8;
  std::uint64_t seed = 7;
  double flip_probability = 0.5;
  /// Training-set Drone->Satellite R@1 is measured every this many steps (0 disables).
  std::size_t eval_every = 0;
};

struct RunConfig {
  ModelConfig model;
  losses::LossWeights loss;
  AdamWConfig optimizer;
  double warmup_fraction = 0.1;
  double lr_floor = 0.0;
  TrainSettings train;

  void validate() const;
  ScheduleConfig schedule() const;
};

/// Flat "key = value" text grouped under [model], [loss], [optim] and [train].
/// Unknown sections or keys are errors.
RunConfig parse_config(std::string_view text, const std::string& origin = "<config>");
std::string serialize_config(const RunConfig& config);
RunConfig load_config(const std::filesystem::path& path);

}  // namespace sfde
