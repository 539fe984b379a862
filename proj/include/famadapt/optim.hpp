#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "famadapt/tensor.hpp"

namespace famadapt {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Moment buffers keyed by parameter name so a checkpoint can restore them
// even if the caller rebuilds its Parameter objects.
struct AdamState {
  struct Slot {
    std::vector<double> m;
    std::vector<double> v;
  };
  std::map<std::string, Slot> slots;
  std::int64_t step = 0;
};

// One Adam update over `params` at learning rate `lr`. Frozen parameters and
// parameters whose gradient buffer was never touched are skipped; everything
// else must already carry its (possibly zero-filled) gradient. Increments
// state.step once per call, not per parameter.
void adam_step(std::vector<Parameter*>& params, AdamState& state, const AdamConfig& cfg, double lr);

// Zero every gradient buffer, including frozen parameters' buffers.
void zero_gradients(std::vector<Parameter*>& params);

// Multiply every live gradient by `factor` (used to turn token-sum gradients
// into token-mean gradients after accumulation).
void scale_gradients(std::vector<Parameter*>& params, double factor);

}  // namespace famadapt
