#pragma once

// Pixel classifiers mapping a feature map X [C,H,W] to logits Y [N,H,W].
// None of them carries a bias term.
//
//   Base    Y_ij = w^T X_ij                              (shared 1x1 conv)
//   BaseF   Base on a backbone whose input image has (i, j) channels appended
//   BaseB   Base on X with (i, j) channels appended
//   SCP     Y_ij = (W_ij + w_r)^T X_ij,  W_ij = Phi(S_ij)
//
// Phi is two 1x1 conv + ReLU layers followed by a 1x1 conv, applied to the
// four-distance position encoding S. The normalisation forms that lead to
// the SCP head are available for verification:
//
//   MuSigma      Y_ij = w^T ((X_ij - mu_ij) / sigma_ij)
//   PQ           Y_ij = w^T (X_ij o P_ij + Q_ij)
//   PQ reformed  Y_ij = X_ij^T (w o P_ij) + w^T Q_ij

#include <cstddef>
#include <cstdint>
#include <string_view>

#include "scp/posenc.hpp"
#include "scp/tensor.hpp"
#include "scp/tensor_io.hpp"

namespace scp {
inline namespace SCP_PRECISION_NS {

inline constexpr real kSigmaFloor = real(1e-4);

struct SharedHead {
  Tensor w;  // [C, N]

  std::size_t in_channels() const { return w.dim(0); }
  std::size_t classes() const { return w.dim(1); }
};

Tensor base_forward(Graph& g, const SharedHead& head, const Tensor& x);

struct PhiNet {
  Tensor w1;  // [h, 4, 1, 1]
  Tensor w2;  // [h, h, 1, 1]
  Tensor w3;  // [out, h, 1, 1]

  std::size_t hidden() const { return w1.dim(0); }
  std::size_t out_channels() const { return w3.dim(0); }
  std::size_t param_count() const { return w1.numel() + w2.numel() + w3.numel(); }
};

// S [4,H,W] -> generated weights [out_channels, H, W]
Tensor phi_forward(Graph& g, const PhiNet& phi, const PositionEncoding& s);

enum class ScpForm { MuSigma, PQ, Final };

struct ScpHead {
  PhiNet phi;  // emits N*C channels (Final) or 2*C channels (MuSigma, PQ)
  Tensor w_r;  // [C, N]
  ScpForm form = ScpForm::Final;

  std::size_t in_channels() const { return w_r.dim(0); }
  std::size_t classes() const { return w_r.dim(1); }
  std::size_t param_count() const { return phi.param_count() + w_r.numel(); }
};

Tensor scp_forward_final(Graph& g, const ScpHead& head, const Tensor& x, const PositionEncoding& s);

// sigma is clamped to kSigmaFloor; `clamped` receives how many entries were.
Tensor scp_forward_musigma(Graph& g, const ScpHead& head, const Tensor& x, const PositionEncoding& s,
                           std::size_t* clamped = nullptr);

// The same two heads with Phi's output [out,H,W] already computed, so one
// evaluation of Phi can serve several feature maps of the same size.
Tensor scp_apply_final(Graph& g, const ScpHead& head, const Tensor& x, const Tensor& generated);
Tensor scp_apply_musigma(Graph& g, const ScpHead& head, const Tensor& x, const Tensor& generated,
                         std::size_t* clamped = nullptr);

struct PqLogits {
  Tensor hadamard;      // w^T (X o P + Q)
  Tensor reformulated;  // X^T (w o P) + w^T Q
};
PqLogits scp_forward_pq(Graph& g, const ScpHead& head, const Tensor& x, const PositionEncoding& s);
PqLogits scp_apply_pq(Graph& g, const ScpHead& head, const Tensor& x, const Tensor& generated);

// Runs the equation selected by head.form (the Hadamard path for PQ).
Tensor scp_forward(Graph& g, const ScpHead& head, const Tensor& x, const PositionEncoding& s,
                   std::size_t* clamped = nullptr);

enum class CoordKind { BaseF, BaseB };

struct CoordHeadVariant {
  CoordKind kind = CoordKind::BaseB;
  SharedHead head;  // BaseB: C+2 input channels
};

// Appends coords [2,H,W] to an image (BaseF input side).
Tensor with_coords(Graph& g, const Tensor& image, const Tensor& coords);

// BaseB: classifies concat(X, coords). BaseF: coords were already appended
// to the image, so this is the shared head on X and `coords` is unused.
Tensor coord_head_forward(Graph& g, const CoordHeadVariant& variant, const Tensor& x, const Tensor& coords);

enum class HeadVariant { Base, BaseF, BaseB, ScpMuSigma, Scp };

std::string_view to_string(HeadVariant v);
// Accepts base, basef, baseb, scp-musigma, scp (case-insensitive).
HeadVariant parse_head_variant(std::string_view name);

struct Head {
  HeadVariant kind = HeadVariant::Base;
  SharedHead shared;  // Base, BaseF, BaseB
  ScpHead scp;        // ScpMuSigma, Scp

  NamedTensors parameters() const;
  std::size_t param_count() const;
};

// C: feature channels from the backbone, N: classes, hidden: Phi width.
// zero_init_phi_last zeroes Phi's last layer of the Scp head so that it
// starts as the shared head w_r.
Head init_head(HeadVariant kind, std::size_t channels, std::size_t classes, std::size_t hidden, std::uint64_t seed,
               bool zero_init_phi_last = true);

}  // namespace SCP_PRECISION_NS
}  // namespace scp
