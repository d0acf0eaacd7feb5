#include "sfde/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace sfde {

void AdamWConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
}

template <typename T>
AdamW<T>::AdamW(ParameterStore<T>& store, const AdamWConfig& config) : store_(store), config_(config) {
  config_.validate();
  m_.resize(store.size());
  v_.resize(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    m_[i].assign(store.at(i).value.size(), 0.0);
    v_[i].assign(store.at(i).value.size(), 0.0);
  }
}

template <typename T>
void AdamW<T>::step(double lr) {
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, double(t_));
  const double c2 = 1.0 - std::pow(b2, double(t_));
  for (std::size_t i = 0; i < store_.size(); ++i) {
    Parameter<T>& p = store_.at(i);
    if (!p.trainable()) continue;
    auto& m = m_[i];
    auto& v = v_[i];
    const double decay = p.decays() ? lr * config_.weight_decay : 0.0;
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j];
      m[j] = b1 * m[j] + (1.0 - b1) * g;
      v[j] = b2 * v[j] + (1.0 - b2) * g * g;
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      double w = p.value[j];
      w -= decay * w;
      w -= lr * mhat / (std::sqrt(vhat) + config_.epsilon);
      p.value[j] = T(w);
    }
  }
}

template <typename T>
std::string AdamW<T>::describe() const {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "adaptive moments with decoupled weight decay: m=b1*m+(1-b1)*g; v=b2*v+(1-b2)*g^2; "
                "w-=lr*wd*w (conv/linear weights only); w-=lr*(m/(1-b1^t))/(sqrt(v/(1-b2^t))+eps); "
                "b1=%.17g b2=%.17g eps=%.17g wd=%.17g lr_peak=%.17g",
                config_.beta1, config_.beta2, config_.epsilon, config_.weight_decay, config_.learning_rate);
  return buf;
}

double scheduled_rate(const ScheduleConfig& s, std::size_t step) {
  if (s.total_steps == 0) return s.peak;
  const double warm = std::floor(s.warmup_fraction * double(s.total_steps));
  const double t = double(step);
  if (warm > 0 && t < warm) return s.peak * t / warm;
  const double span = double(s.total_steps) - warm;
  if (span <= 0) return s.peak;
  const double progress = std::clamp((t - warm) / span, 0.0, 1.0);
  return s.floor + 0.5 * (s.peak - s.floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace sfde
