#include "famadapt/optim.hpp"

#include <cmath>

#include "famadapt/error.hpp"

namespace famadapt {

void adam_step(std::vector<Parameter*>& params, AdamState& state, const AdamConfig& cfg, double lr) {
  ++state.step;
  const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (Parameter* p : params) {
    if (p->frozen || !p->tensor.has_grad()) continue;
    auto& slot = state.slots[p->name];
    const std::size_t n = p->tensor.values().size();
    if (slot.m.empty()) {
      slot.m.assign(n, 0.0);
      slot.v.assign(n, 0.0);
    } else if (slot.m.size() != n) {
      throw ContractError("adam_step: stale moment buffers for '" + p->name + "'");
    }
    auto& w = p->tensor.values();
    const auto& g = p->tensor.grad();
    for (std::size_t i = 0; i < n; ++i) {
      double gi = g[i] + cfg.weight_decay * w[i];
      slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * gi;
      slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * gi * gi;
      double mhat = slot.m[i] / bias1;
      double vhat = slot.v[i] / bias2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

void zero_gradients(std::vector<Parameter*>& params) {
  for (Parameter* p : params) p->tensor.zero_grad();
}

void scale_gradients(std::vector<Parameter*>& params, double factor) {
  for (Parameter* p : params) {
    if (p->frozen || !p->tensor.has_grad()) continue;
    for (double& g : p->tensor.grad()) g *= factor;
  }
}

}  // namespace famadapt
