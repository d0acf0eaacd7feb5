#pragma once

#include <string>
#include <vector>

#include "sfde/autodiff.hpp"

namespace sfde {

struct AdamWConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.05;

  void validate() const;
};

/// Adam moments with decoupled weight decay applied to ParamRole::Weight only.
template <typename T>
class AdamW {
 public:
  AdamW(ParameterStore<T>& store, const AdamWConfig& config);

  /// One update at step size lr; gradients are read from Parameter::grad.
  void step(double lr);
  std::size_t steps_taken() const { return t_; }

  /// The update rule in words and numbers, stored alongside checkpoints.
  std::string describe() const;

 private:
  ParameterStore<T>& store_;
  AdamWConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

struct ScheduleConfig {
  std::size_t total_steps = 200;
  double warmup_fraction = 0.1;
  double peak = 1e-3;
  double floor = 0.0;
};

/// Linear warm-up from 0 to the peak over the first warmup_fraction of the
/// steps, then cosine decay to the floor at the final step.
double scheduled_rate(const ScheduleConfig& schedule, std::size_t step);

}  // namespace sfde
