#include "scp/model.hpp"

#include <algorithm>

namespace scp {
inline namespace SCP_PRECISION_NS {

BackboneConfig ModelConfig::effective_backbone() const {
  BackboneConfig b = backbone;
  if (head == HeadVariant::BaseF) b.in_channels += 2;
  return b;
}

Segmenter::Segmenter(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg),
      backbone_(build_backbone(cfg.effective_backbone(), seed)),
      head_(init_head(cfg.head, cfg.backbone.feature_channels(), cfg.classes, cfg.phi_hidden,
                      seed ^ 0x9e3779b97f4a7c15ULL, cfg.zero_init_phi_last)) {}

const PositionEncoding& Segmenter::positions(std::size_t height, std::size_t width) const {
  auto key = std::make_pair(height, width);
  auto it = position_cache_.find(key);
  if (it == position_cache_.end()) {
    it = position_cache_.emplace(key, encode_positions(height, width, cfg_.normalize_positions)).first;
  }
  return it->second;
}

const Tensor& Segmenter::coords(std::size_t height, std::size_t width) const {
  auto key = std::make_pair(height, width);
  auto it = coord_cache_.find(key);
  if (it == coord_cache_.end()) it = coord_cache_.emplace(key, coord_channels(height, width)).first;
  return it->second;
}

std::vector<Tensor> Segmenter::forward_batch(Graph& g, std::span<const Tensor> images, std::size_t* clamped) const {
  if (clamped) *clamped = 0;
  const bool scp = cfg_.head == HeadVariant::Scp || cfg_.head == HeadVariant::ScpMuSigma;
  std::map<std::pair<std::size_t, std::size_t>, Tensor> generated;
  std::vector<Tensor> out;
  out.reserve(images.size());
  for (const auto& image : images) {
    if (!image.defined() || image.rank() != 3) throw DimensionError("forward: image must be [C,H,W]");
    const std::size_t h = image.dim(1), w = image.dim(2);
    switch (cfg_.head) {
      case HeadVariant::Base:
        out.push_back(base_forward(g, head_.shared, backbone_forward(g, backbone_, image)));
        break;
      case HeadVariant::BaseF: {
        const Tensor x = backbone_forward(g, backbone_, with_coords(g, image, coords(h, w)));
        out.push_back(coord_head_forward(g, {CoordKind::BaseF, head_.shared}, x, coords(h, w)));
        break;
      }
      case HeadVariant::BaseB:
        out.push_back(coord_head_forward(g, {CoordKind::BaseB, head_.shared}, backbone_forward(g, backbone_, image),
                                         coords(h, w)));
        break;
      case HeadVariant::ScpMuSigma:
      case HeadVariant::Scp: break;
    }
    if (!scp) continue;
    const Tensor x = backbone_forward(g, backbone_, image);
    auto it = generated.find({h, w});
    if (it == generated.end()) {
      it = generated.emplace(std::make_pair(h, w), phi_forward(g, head_.scp.phi, positions(h, w))).first;
    }
    if (cfg_.head == HeadVariant::Scp) {
      out.push_back(scp_apply_final(g, head_.scp, x, it->second));
    } else {
      std::size_t n = 0;
      out.push_back(scp_apply_musigma(g, head_.scp, x, it->second, &n));
      if (clamped) *clamped += n;
    }
  }
  return out;
}

Tensor Segmenter::forward(Graph& g, const Tensor& image, std::size_t* clamped) const {
  return forward_batch(g, std::span<const Tensor>(&image, 1), clamped).front();
}

Tensor Segmenter::generated_weights(std::size_t height, std::size_t width) const {
  if (cfg_.head != HeadVariant::Scp && cfg_.head != HeadVariant::ScpMuSigma) {
    throw ContractError("generated_weights: model has no implicit weight function");
  }
  Graph g(false);
  return phi_forward(g, head_.scp.phi, positions(height, width));
}

NamedTensors Segmenter::parameters() const {
  NamedTensors all = backbone_.weights;
  for (auto& [name, t] : all) name = "backbone." + name;
  for (auto& p : head_.parameters()) all.push_back(std::move(p));
  return all;
}

std::size_t Segmenter::param_count() const { return backbone_.param_count() + head_.param_count(); }

void Segmenter::zero_grad() {
  for (auto& [name, t] : parameters()) t.zero_grad();
}

void Segmenter::load(const NamedTensors& tensors) {
  for (auto& [name, param] : parameters()) {
    auto it = std::find_if(tensors.begin(), tensors.end(), [&](const auto& nt) { return nt.first == name; });
    if (it == tensors.end()) throw ContractError("checkpoint is missing parameter '" + name + "'");
    if (it->second.shape() != param.shape()) {
      throw DimensionError("checkpoint parameter '" + name + "' has shape " + shape_string(it->second.shape()) +
                           ", model expects " + shape_string(param.shape()));
    }
    Tensor dst = param;
    auto src = it->second.values();
    std::copy(src.begin(), src.end(), dst.mutable_values().begin());
  }
}

}  // namespace SCP_PRECISION_NS
}  // namespace scp
