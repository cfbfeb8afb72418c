#include "gibrss/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "gibrss/errors.hpp"

namespace gibrss {

AdamW::AdamW(const ParameterSet& ps, AdamWConfig cfg) : cfg_(cfg) {
  m_.reserve(ps.size());
  v_.reserve(ps.size());
  for (ParamId i = 0; i < ps.size(); ++i) {
    m_.emplace_back(ps.value(i).shape());
    v_.emplace_back(ps.value(i).shape());
  }
}

void AdamW::step(ParameterSet& ps, const Gradients& grads, double lr) {
  if (ps.size() != m_.size() || grads.size() != m_.size())
    throw ContractError("AdamW::step: parameter set changed since construction");
  if (!(lr >= 0.0)) throw ContractError("AdamW::step: learning rate must be >= 0");
  for (ParamId id = 0; id < ps.size(); ++id)
    for (double g : grads.get(id).data())
      if (std::isnan(g)) throw NumericError("NaN gradient for parameter '" + ps.name(id) + "'");

  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (ParamId id = 0; id < ps.size(); ++id) {
    auto p = ps.value(id).data();
    const auto g = grads.get(id).data();
    auto m = m_[id].data();
    auto v = v_[id].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      p[k] -= lr * cfg_.weight_decay * p[k];
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p[k] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr_max) {
  if (total_steps <= 0) throw ContractError("cosine_lr: total_steps must be positive");
  if (step < 0 || step > total_steps)
    throw ContractError("cosine_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_max * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace gibrss
