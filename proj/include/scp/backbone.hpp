#pragma once

// Encoder-decoder feature extractor with skip concatenation.
//
// Level l (0 = full resolution) has width n_c / 2^(depth-1-l); the centre
// level depth-1 has n_c channels. Encoder levels run two 3x3 conv + ReLU
// then 2x2 max pooling; decoder levels upsample (nearest), concatenate the
// encoder tensor of the same level and run two 3x3 conv + ReLU. No biases,
// no normalization layers.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "scp/tensor.hpp"
#include "scp/tensor_io.hpp"

namespace scp {
inline namespace SCP_PRECISION_NS {

struct BackboneConfig {
  std::size_t in_channels = 1;
  std::size_t n_c = 128;
  std::size_t depth = 4;

  // Throws ConfigError naming the violated constraint.
  void validate() const;
  std::size_t width(std::size_t level) const { return n_c >> (depth - 1 - level); }
  std::size_t feature_channels() const { return width(0); }
  // H and W must be multiples of this.
  std::size_t spatial_multiple() const { return std::size_t{1} << (depth - 1); }
};

struct ConvSpec {
  std::string name;
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::size_t kernel = 3;
  std::size_t level = 0;

  std::size_t params() const { return c_out * c_in * kernel * kernel; }
};

// Conv layers in forward order.
std::vector<ConvSpec> backbone_layers(const BackboneConfig& cfg);

struct BackboneParams {
  BackboneConfig cfg;
  NamedTensors weights;  // same order as backbone_layers(cfg)

  std::size_t param_count() const;
};

BackboneParams build_backbone(const BackboneConfig& cfg, std::uint64_t seed);

// image [in_channels,H,W] -> features [feature_channels,H,W]
Tensor backbone_forward(Graph& g, const BackboneParams& params, const Tensor& image);

}  // namespace SCP_PRECISION_NS
}  // namespace scp
