#include "scp/posenc.hpp"

#include <algorithm>

namespace scp {
inline namespace SCP_PRECISION_NS {

PositionEncoding encode_positions(std::size_t height, std::size_t width, bool normalize) {
  if (height == 0 || width == 0) throw ContractError("encode_positions: H and W must be >= 1");
  const real scale = normalize ? real(1) / static_cast<real>(std::max(height, width)) : real(1);
  const std::size_t plane = height * width;
  std::vector<real> v(4 * plane);
  for (std::size_t i = 0; i < height; ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      const std::size_t p = i * width + j;
      // complements are formed in integers so that s0 + s2 == H exactly
      v[p] = static_cast<real>(i) * scale;
      v[plane + p] = static_cast<real>(j) * scale;
      v[2 * plane + p] = static_cast<real>(height - i) * scale;
      v[3 * plane + p] = static_cast<real>(width - j) * scale;
    }
  }
  return {Tensor({4, height, width}, std::move(v)), normalize};
}

Tensor coord_channels(std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw ContractError("coord_channels: H and W must be >= 1");
  const real d = static_cast<real>(std::max(height, width));
  const std::size_t plane = height * width;
  std::vector<real> v(2 * plane);
  for (std::size_t i = 0; i < height; ++i) {
    for (std::size_t j = 0; j < width; ++j) {
      v[i * width + j] = static_cast<real>(i) / d;
      v[plane + i * width + j] = static_cast<real>(j) / d;
    }
  }
  return Tensor({2, height, width}, std::move(v));
}

}  // namespace SCP_PRECISION_NS
}  // namespace scp
