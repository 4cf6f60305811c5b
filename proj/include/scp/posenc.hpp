#pragma once

#include <cstddef>

#include "scp/tensor.hpp"

namespace scp {
inline namespace SCP_PRECISION_NS {

// Four-distance encoding of every pixel: channels (i, j, H-i, W-j) with
// zero-based i, j. With `normalized` every channel is divided by max(H, W).
struct PositionEncoding {
  Tensor s;  // [4, H, W]
  bool normalized = true;

  std::size_t height() const { return s.dim(1); }
  std::size_t width() const { return s.dim(2); }
};

PositionEncoding encode_positions(std::size_t height, std::size_t width, bool normalize = true);

// Two-channel (i, j) / max(H, W) coordinates used by the CoordConv heads.
Tensor coord_channels(std::size_t height, std::size_t width);

}  // namespace SCP_PRECISION_NS
}  // namespace scp
