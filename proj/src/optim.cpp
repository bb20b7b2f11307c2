#include "adt/optim.hpp"

#include <cmath>
#include <cstdint>

#include "adt/error.hpp"

namespace adt {

void OptConfig::validate() const {
  if (!(learning_rate > 0) || !(epsilon > 0) || !(clip_norm > 0) || weight_decay < 0)
    throw ValidationError("optimizer rates must be positive");
  if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1)) throw ValidationError("adam betas must lie in (0, 1)");
  if (batch_size == 0 || steps == 0) throw ValidationError("batch_size and steps must be positive");
}

double OptConfig::rate_at(std::size_t step) const {
  if (warmup_steps == 0 || step >= warmup_steps) return learning_rate;
  return learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
}

template <typename T>
double clip_global_norm(std::span<T> grads, double max_norm) {
  double sq = 0;
  for (T g : grads) sq += static_cast<double>(g) * static_cast<double>(g);
  const double n = std::sqrt(sq);
  if (n > max_norm && n > 0) {
    const double s = max_norm / n;
    for (T& g : grads) g = static_cast<T>(g * s);
  }
  return n;
}

template <typename T>
AdamW<T>::AdamW(std::size_t n, const OptConfig& cfg, std::vector<std::uint8_t> decay_mask)
    : cfg_(cfg), m_(n, 0.0), v_(n, 0.0), decay_(std::move(decay_mask)) {
  cfg_.validate();
  if (!decay_.empty() && decay_.size() != n) throw ValidationError("decay mask size mismatch");
}

template <typename T>
void AdamW<T>::step(std::span<T> params, std::span<const T> grads, double lr) {
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    m_[i] = b1 * m_[i] + (1 - b1) * g;
    v_[i] = b2 * v_[i] + (1 - b2) * g * g;
    const double mhat = m_[i] / c1, vhat = v_[i] / c2;
    double p = params[i];
    if (cfg_.weight_decay > 0 && (decay_.empty() || decay_[i])) p -= lr * cfg_.weight_decay * p;
    p -= lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    params[i] = static_cast<T>(p);
  }
}

template double clip_global_norm(std::span<float>, double);
template double clip_global_norm(std::span<double>, double);
template class AdamW<float>;
template class AdamW<double>;

}  // namespace adt
