#pragma once

#include <string>
#include <vector>

#include "famadapt/ops.hpp"
#include "famadapt/rng.hpp"
#include "famadapt/tensor.hpp"

namespace famadapt {

// Epsilon shared by every layer norm in the adapter and the transformer.
inline constexpr double kLayerNormEps = 1e-5;

enum class AdapterPlacement { after_ff, before_ff, embedding };

struct AdapterConfig {
  Index model_dim = 0;   // width of the activations the adapter sits on
  Index bottleneck = 0;  // inner projection width, the only tuned knob
  double init_scale = 0.01;
  AdapterPlacement placement = AdapterPlacement::after_ff;
};

// Residual bottleneck block: z + U.relu(D.ln(z) + b_down) + b_up. Freshly
// initialized layers are exact identities because U and both biases start
// at zero.
struct AdapterLayer {
  AdapterConfig config;
  Parameter ln_scale;
  Parameter ln_offset;
  Parameter down_w;     // [h x d]
  Parameter down_bias;  // [d]
  Parameter up_w;       // [d x h]
  Parameter up_bias;    // [h]

  std::vector<Parameter*> parameters();
};

// Builds an identity-at-init layer. Parameter names are prefixed with
// `name_prefix` so several sets can coexist in one checkpoint.
AdapterLayer adapter_init(const AdapterConfig& cfg, Rng& rng, const std::string& name_prefix);

Tensor adapter_forward(const AdapterLayer& layer, const Tensor& z);

// 2h (norm) + hd + d (down) + dh + h (up).
Index adapter_param_count(const AdapterConfig& cfg);

}  // namespace famadapt
