#include <cmath>

#include "harmony/training.hpp"

namespace harmony::training {

AdamState adam_init(const std::vector<Parameter>& params) {
  AdamState s;
  for (const Parameter& p : params) {
    s.m.emplace_back(p.value.shape());
    s.v.emplace_back(p.value.shape());
  }
  return s;
}

void adam_step(std::vector<Parameter>& params, AdamState& state, Real lr,
               const AdamConfig& config) {
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw ContractError("Adam state has " + std::to_string(state.m.size()) +
                        " slots for " + std::to_string(params.size()) + " parameters");
  if (!(lr > 0)) throw ValidationError("learning rate must be positive");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Parameter& p = params[k];
    if (state.m[k].shape() != p.value.shape() || state.v[k].shape() != p.value.shape())
      throw ContractError("Adam state shape mismatch for '" + p.name + "'");
    if (!p.grad.all_finite())
      throw DivergenceError("non-finite gradient in parameter '" + p.name + "'");
  }

  ++state.t;
  const Real b1 = config.beta1, b2 = config.beta2;
  const Real c1 = 1 - std::pow(b1, static_cast<Real>(state.t));
  const Real c2 = 1 - std::pow(b2, static_cast<Real>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = params[k];
    const Real mult = p.lr_multiplier;
    Real* w = p.value.ptr();
    const Real* g = p.grad.ptr();
    Real* m = state.m[k].ptr();
    Real* v = state.v[k].ptr();
    const std::size_t n = p.value.size();
#pragma omp parallel for schedule(static) if (n > 65536)
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const Real mh = m[i] / c1, vh = v[i] / c2;
      w[i] -= mult * (lr * mh / (std::sqrt(vh) + config.eps));
    }
  }
}

LrSchedule LrSchedule::scaled(int total_epochs, Real base_lr) {
  LrSchedule s;
  s.base_lr = base_lr;
  s.total_epochs = total_epochs;
  s.milestones.clear();
  for (int frac : {160, 175}) {
    const int m = static_cast<int>(static_cast<long long>(frac) * total_epochs / 180);
    if (m > 0 && (s.milestones.empty() || m > s.milestones.back())) s.milestones.push_back(m);
  }
  return s;
}

std::vector<std::string> LrSchedule::violations() const {
  std::vector<std::string> out;
  if (!(base_lr > 0)) out.push_back("schedule.base_lr must be positive");
  if (!(factor > 0 && factor <= 1)) out.push_back("schedule.factor must lie in (0, 1]");
  if (total_epochs < 0) out.push_back("schedule.total_epochs must be >= 0");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (i > 0 && milestones[i] <= milestones[i - 1])
      out.push_back("schedule.milestones must be strictly increasing");
    if (milestones[i] < 0 || milestones[i] >= total_epochs)
      out.push_back("schedule milestone " + std::to_string(milestones[i]) +
                    " outside [0, total_epochs)");
  }
  return out;
}

Real lr_at(int epoch, const LrSchedule& schedule) {
  if (epoch < 0 || epoch >= schedule.total_epochs)
    throw ValidationError("epoch " + std::to_string(epoch) + " outside [0, " +
                          std::to_string(schedule.total_epochs) + ")");
  Real lr = schedule.base_lr;
  for (int m : schedule.milestones)
    if (m <= epoch) lr *= schedule.factor;
  return lr;
}

}  // namespace harmony::training
