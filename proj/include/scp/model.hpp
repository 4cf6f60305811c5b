#pragma once

// Backbone + head, the unit that is trained, checkpointed and evaluated.

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "scp/backbone.hpp"
#include "scp/heads.hpp"

namespace scp {
inline namespace SCP_PRECISION_NS {

struct ModelConfig {
  BackboneConfig backbone;  // in_channels = image channels (BaseF adds 2 internally)
  HeadVariant head = HeadVariant::Scp;
  std::size_t classes = 1;
  std::size_t phi_hidden = 64;
  bool zero_init_phi_last = true;
  bool normalize_positions = true;

  BackboneConfig effective_backbone() const;
};

class Segmenter {
 public:
  Segmenter(const ModelConfig& cfg, std::uint64_t seed);
  // Parameters are shared storage; copying would alias them.
  Segmenter(const Segmenter&) = delete;
  Segmenter& operator=(const Segmenter&) = delete;
  Segmenter(Segmenter&&) = default;
  Segmenter& operator=(Segmenter&&) = default;

  const ModelConfig& config() const noexcept { return cfg_; }

  // image [in_channels,H,W] -> logits [N,H,W]. `clamped` receives the
  // sigma clamp count for the MuSigma head (0 otherwise).
  Tensor forward(Graph& g, const Tensor& image, std::size_t* clamped = nullptr) const;

  // forward() on every image of a batch. SCP heads evaluate Phi once per
  // image size and share the result across the batch (same values and
  // gradients as separate calls). `clamped` receives the summed count.
  std::vector<Tensor> forward_batch(Graph& g, std::span<const Tensor> images, std::size_t* clamped = nullptr) const;

  // Per-pixel weights generated by Phi at H x W, [out,H,W]. SCP heads only.
  Tensor generated_weights(std::size_t height, std::size_t width) const;

  NamedTensors parameters() const;
  std::size_t param_count() const;
  void zero_grad();
  // Copies values by name; every parameter must be present with its shape.
  void load(const NamedTensors& tensors);

  const BackboneParams& backbone() const noexcept { return backbone_; }
  const Head& head() const noexcept { return head_; }

 private:
  const PositionEncoding& positions(std::size_t height, std::size_t width) const;
  const Tensor& coords(std::size_t height, std::size_t width) const;

  ModelConfig cfg_;
  BackboneParams backbone_;
  Head head_;
  mutable std::map<std::pair<std::size_t, std::size_t>, PositionEncoding> position_cache_;
  mutable std::map<std::pair<std::size_t, std::size_t>, Tensor> coord_cache_;
};

}  // namespace SCP_PRECISION_NS
}  // namespace scp
