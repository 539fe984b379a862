#include "famadapt/adapter.hpp"

#include <string>

#include "famadapt/error.hpp"

namespace famadapt {

namespace {

void validate(const AdapterConfig& cfg) {
  std::string problems;
  if (cfg.model_dim < 1) problems += "model_dim must be >= 1; ";
  if (cfg.bottleneck < 1) problems += "bottleneck must be >= 1; ";
  if (cfg.init_scale < 0.0) problems += "init_scale must be nonnegative; ";
  if (!problems.empty())
    throw ConfigError("adapter config: " + problems.substr(0, problems.size() - 2));
}

}  // namespace

std::vector<Parameter*> AdapterLayer::parameters() {
  return {&ln_scale, &ln_offset, &down_w, &down_bias, &up_w, &up_bias};
}

AdapterLayer adapter_init(const AdapterConfig& cfg, Rng& rng, const std::string& name_prefix) {
  validate(cfg);
  const Index h = cfg.model_dim, d = cfg.bottleneck;
  AdapterLayer layer;
  layer.config = cfg;
  layer.ln_scale = Parameter(Tensor({h}, 1.0), name_prefix + ".ln_scale");
  layer.ln_offset = Parameter(Tensor({h}, 0.0), name_prefix + ".ln_offset");
  Tensor down({h, d});
  for (double& v : down.values()) v = rng.uniform(-cfg.init_scale, cfg.init_scale);
  layer.down_w = Parameter(std::move(down), name_prefix + ".down_w");
  layer.down_bias = Parameter(Tensor({d}, 0.0), name_prefix + ".down_bias");
  layer.up_w = Parameter(Tensor({d, h}, 0.0), name_prefix + ".up_w");
  layer.up_bias = Parameter(Tensor({h}, 0.0), name_prefix + ".up_bias");
  return layer;
}

Tensor adapter_forward(const AdapterLayer& layer, const Tensor& z) {
  if (z.rank() != 2 || z.dim(1) != layer.config.model_dim)
    throw ShapeError("adapter expects [n x " + std::to_string(layer.config.model_dim) +
                     "] activations, got " + shape_to_string(z.shape()));
  Tensor normed = layer_norm(z, layer.ln_scale.tensor, layer.ln_offset.tensor, kLayerNormEps);
  Tensor hidden = relu(add_bias(matmul(normed, layer.down_w.tensor), layer.down_bias.tensor));
  Tensor up = add_bias(matmul(hidden, layer.up_w.tensor), layer.up_bias.tensor);
  return add(up, z);
}

Index adapter_param_count(const AdapterConfig& cfg) {
  validate(cfg);
  const Index h = cfg.model_dim, d = cfg.bottleneck;
  return 2 * h + 2 * h * d + d + h;
}

}  // namespace famadapt
