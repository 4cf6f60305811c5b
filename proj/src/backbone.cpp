#include "scp/backbone.hpp"

#include <cmath>
#include <random>

namespace scp {
inline namespace SCP_PRECISION_NS {

void BackboneConfig::validate() const {
  if (in_channels < 1) throw ConfigError("backbone: in_channels must be >= 1");
  if (depth < 1 || depth > 16) throw ConfigError("backbone: depth must be in [1, 16]");
  const std::size_t m = std::size_t{1} << (depth - 1);
  if (n_c < m || n_c % m != 0) {
    throw ConfigError("backbone: n_c=" + std::to_string(n_c) + " must be a positive multiple of 2^(depth-1)=" +
                      std::to_string(m));
  }
}

std::vector<ConvSpec> backbone_layers(const BackboneConfig& cfg) {
  cfg.validate();
  std::vector<ConvSpec> layers;
  const std::size_t top = cfg.depth - 1;
  std::size_t c = cfg.in_channels;
  for (std::size_t l = 0; l < top; ++l) {
    const std::string p = "enc" + std::to_string(l);
    layers.push_back({p + ".conv1", c, cfg.width(l), 3, l});
    layers.push_back({p + ".conv2", cfg.width(l), cfg.width(l), 3, l});
    c = cfg.width(l);
  }
  layers.push_back({"center.conv1", c, cfg.width(top), 3, top});
  layers.push_back({"center.conv2", cfg.width(top), cfg.width(top), 3, top});
  for (std::size_t l = top; l-- > 0;) {
    const std::string p = "dec" + std::to_string(l);
    layers.push_back({p + ".conv1", cfg.width(l) + cfg.width(l + 1), cfg.width(l), 3, l});
    layers.push_back({p + ".conv2", cfg.width(l), cfg.width(l), 3, l});
  }
  return layers;
}

std::size_t BackboneParams::param_count() const {
  std::size_t n = 0;
  for (const auto& [name, w] : weights) n += w.numel();
  return n;
}

BackboneParams build_backbone(const BackboneConfig& cfg, std::uint64_t seed) {
  BackboneParams params{cfg, {}};
  std::mt19937_64 rng(seed);
  for (const auto& layer : backbone_layers(cfg)) {
    const std::size_t fan_in = layer.c_in * layer.kernel * layer.kernel;
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor w({layer.c_out, layer.c_in, layer.kernel, layer.kernel});
    for (auto& v : w.mutable_values()) v = static_cast<real>(dist(rng));
    w.set_requires_grad(true);
    params.weights.emplace_back(layer.name, std::move(w));
  }
  return params;
}

Tensor backbone_forward(Graph& g, const BackboneParams& params, const Tensor& image) {
  const auto& cfg = params.cfg;
  if (!image.defined() || image.rank() != 3) throw DimensionError("backbone: image must be [C,H,W]");
  if (image.dim(0) != cfg.in_channels) {
    throw DimensionError("backbone: expected " + std::to_string(cfg.in_channels) + " image channels, got " +
                         std::to_string(image.dim(0)));
  }
  const std::size_t m = cfg.spatial_multiple();
  if (image.dim(1) % m != 0 || image.dim(2) % m != 0) {
    throw DimensionError("backbone: H and W must be divisible by " + std::to_string(m) + ", got " +
                         shape_string(image.shape()));
  }

  std::size_t next = 0;
  auto conv_relu = [&](const Tensor& x) {
    const Tensor& w = params.weights.at(next++).second;
    return relu(g, conv2d(g, x, w, 1, 1));
  };

  const std::size_t top = cfg.depth - 1;
  std::vector<Tensor> skips;
  Tensor x = image;
  for (std::size_t l = 0; l < top; ++l) {
    x = conv_relu(conv_relu(x));
    skips.push_back(x);
    x = maxpool2(g, x);
  }
  x = conv_relu(conv_relu(x));
  for (std::size_t l = top; l-- > 0;) {
    x = concat_channels(g, skips[l], upsample_nearest2(g, x));
    x = conv_relu(conv_relu(x));
  }
  return x;
}

}  // namespace SCP_PRECISION_NS
}  // namespace scp
