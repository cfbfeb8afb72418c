#pragma once

#include <cstdint>
#include <vector>

#include "gibrss/tape.hpp"

namespace gibrss {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Decoupled decay; zero by default since the training loss carries its own L2 term.
  double weight_decay = 0.0;
};

// AdamW with bias-corrected moments. Decay is applied as
// p -= lr * weight_decay * p before the moment update.
class AdamW {
 public:
  AdamW(const ParameterSet& ps, AdamWConfig cfg);

  // Throws NumericError naming the parameter if any gradient is NaN.
  void step(ParameterSet& ps, const Gradients& grads, double lr);

  std::uint64_t steps() const noexcept { return step_; }
  const AdamWConfig& config() const noexcept { return cfg_; }
  const Tensor& first_moment(ParamId id) const { return m_.at(id); }
  const Tensor& second_moment(ParamId id) const { return v_.at(id); }

 private:
  AdamWConfig cfg_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::uint64_t step_ = 0;
};

// lr_max * 0.5 * (1 + cos(pi * step / total_steps)).
double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr_max);

}  // namespace gibrss
