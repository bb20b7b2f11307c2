#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace adt {

struct OptConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;
  double clip_norm = 0.25;
  std::size_t batch_size = 64;
  std::size_t steps = 5000;
  std::size_t warmup_steps = 100;

  void validate() const;
  // Linear warmup to the base rate, constant afterwards. `step` is 0-based.
  double rate_at(std::size_t step) const;
};

// Scales `grads` in place so its L2 norm is at most `max_norm`. Returns the
// norm before clipping.
template <typename T>
double clip_global_norm(std::span<T> grads, double max_norm);

// Adam with decoupled weight decay. `decay_mask[i]` selects which
// coordinates are decayed; an empty mask decays everything.
template <typename T>
class AdamW {
 public:
  AdamW(std::size_t n, const OptConfig& cfg, std::vector<std::uint8_t> decay_mask = {});

  void step(std::span<T> params, std::span<const T> grads, double lr);
  std::size_t steps_taken() const noexcept { return t_; }

 private:
  OptConfig cfg_;
  std::vector<double> m_, v_;
  std::vector<std::uint8_t> decay_;
  std::size_t t_ = 0;
};

}  // namespace adt
