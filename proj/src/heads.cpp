#include "scp/heads.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>
#include <string>

namespace scp {
inline namespace SCP_PRECISION_NS {

namespace {

void check_features(const Tensor& x, std::size_t channels, std::string_view who) {
  if (!x.defined() || x.rank() != 3) throw DimensionError(std::string(who) + ": features must be [C,H,W]");
  if (x.dim(0) != channels) {
    throw DimensionError(std::string(who) + ": head expects " + std::to_string(channels) + " channels, got " +
                         shape_string(x.shape()));
  }
}

void check_positions(const Tensor& x, const PositionEncoding& s, std::string_view who) {
  if (!s.s.defined() || s.s.rank() != 3 || s.s.dim(0) != 4) {
    throw DimensionError(std::string(who) + ": position encoding must be [4,H,W]");
  }
  if (s.height() != x.dim(1) || s.width() != x.dim(2)) {
    throw DimensionError(std::string(who) + ": position encoding " + shape_string(s.s.shape()) +
                         " does not match features " + shape_string(x.shape()));
  }
}

// w [C,N] -> [N,C,1,1] as a graph value
Tensor classifier_kernel(Graph& g, const Tensor& w) {
  return transpose2d(g, w).reshape({w.dim(1), w.dim(0), 1, 1});
}

Tensor uniform(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_values()) v = static_cast<real>(dist(rng));
  t.set_requires_grad(true);
  return t;
}

}  // namespace

Tensor base_forward(Graph& g, const SharedHead& head, const Tensor& x) {
  check_features(x, head.in_channels(), "base_forward");
  return conv2d(g, x, classifier_kernel(g, head.w), 1, 0);
}

Tensor phi_forward(Graph& g, const PhiNet& phi, const PositionEncoding& s) {
  if (!s.s.defined() || s.s.rank() != 3 || s.s.dim(0) != 4) {
    throw DimensionError("phi_forward: position encoding must be [4,H,W]");
  }
  Tensor h = relu(g, conv2d(g, s.s, phi.w1));
  h = relu(g, conv2d(g, h, phi.w2));
  return conv2d(g, h, phi.w3);
}

Tensor scp_apply_final(Graph& g, const ScpHead& head, const Tensor& x, const Tensor& generated) {
  const std::size_t c = head.in_channels(), n = head.classes();
  check_features(x, c, "scp_forward_final");
  const std::size_t h = x.dim(1), w = x.dim(2);
  if (generated.rank() != 3 || generated.dim(0) != n * c || generated.dim(1) != h || generated.dim(2) != w) {
    throw DimensionError("scp_forward_final: generated weights " + shape_string(generated.shape()) +
                         " do not match N*C=" + std::to_string(n * c) + " channels at " + shape_string(x.shape()));
  }
  const Tensor weights = generated.reshape({n, c, h, w});
  const Tensor covariant = sum_axis(g, mul(g, weights, x.reshape({1, c, h, w})), 1);
  return add(g, base_forward(g, SharedHead{head.w_r}, x), covariant);
}

Tensor scp_forward_final(Graph& g, const ScpHead& head, const Tensor& x, const PositionEncoding& s) {
  check_features(x, head.in_channels(), "scp_forward_final");
  check_positions(x, s, "scp_forward_final");
  if (head.phi.out_channels() != head.classes() * head.in_channels()) {
    throw DimensionError("scp_forward_final: Phi emits " + std::to_string(head.phi.out_channels()) +
                         " channels, expected N*C=" + std::to_string(head.classes() * head.in_channels()));
  }
  return scp_apply_final(g, head, x, phi_forward(g, head.phi, s));
}

Tensor scp_apply_musigma(Graph& g, const ScpHead& head, const Tensor& x, const Tensor& generated,
                         std::size_t* clamped) {
  const std::size_t c = head.in_channels();
  check_features(x, c, "scp_forward_musigma");
  if (generated.rank() != 3 || generated.dim(0) != 2 * c || generated.dim(1) != x.dim(1) ||
      generated.dim(2) != x.dim(2)) {
    throw DimensionError("scp_forward_musigma: Phi must emit 2*C channels at the feature size");
  }
  const Tensor mu = slice_channels(g, generated, 0, c);
  const Tensor sigma = clamp_min(g, slice_channels(g, generated, c, 2 * c), kSigmaFloor, clamped);
  return base_forward(g, SharedHead{head.w_r}, div(g, sub(g, x, mu), sigma));
}

Tensor scp_forward_musigma(Graph& g, const ScpHead& head, const Tensor& x, const PositionEncoding& s,
                           std::size_t* clamped) {
  check_features(x, head.in_channels(), "scp_forward_musigma");
  check_positions(x, s, "scp_forward_musigma");
  if (head.phi.out_channels() != 2 * head.in_channels()) {
    throw DimensionError("scp_forward_musigma: Phi must emit 2*C channels");
  }
  return scp_apply_musigma(g, head, x, phi_forward(g, head.phi, s), clamped);
}

PqLogits scp_apply_pq(Graph& g, const ScpHead& head, const Tensor& x, const Tensor& generated) {
  const std::size_t c = head.in_channels(), n = head.classes();
  check_features(x, c, "scp_forward_pq");
  const std::size_t h = x.dim(1), w = x.dim(2);
  if (generated.rank() != 3 || generated.dim(0) != 2 * c || generated.dim(1) != h || generated.dim(2) != w) {
    throw DimensionError("scp_forward_pq: Phi must emit 2*C channels at the feature size");
  }
  const Tensor p = slice_channels(g, generated, 0, c);
  const Tensor q = slice_channels(g, generated, c, 2 * c);
  const SharedHead shared{head.w_r};

  PqLogits out;
  out.hadamard = base_forward(g, shared, add(g, mul(g, x, p), q));

  const Tensor wp = mul(g, classifier_kernel(g, head.w_r), p.reshape({1, c, h, w}));  // [N,C,H,W]
  const Tensor first = sum_axis(g, mul(g, wp, x.reshape({1, c, h, w})), 1);
  out.reformulated = add(g, first, base_forward(g, shared, q).reshape({n, h, w}));
  return out;
}

PqLogits scp_forward_pq(Graph& g, const ScpHead& head, const Tensor& x, const PositionEncoding& s) {
  check_features(x, head.in_channels(), "scp_forward_pq");
  check_positions(x, s, "scp_forward_pq");
  if (head.phi.out_channels() != 2 * head.in_channels()) {
    throw DimensionError("scp_forward_pq: Phi must emit 2*C channels");
  }
  return scp_apply_pq(g, head, x, phi_forward(g, head.phi, s));
}

Tensor scp_forward(Graph& g, const ScpHead& head, const Tensor& x, const PositionEncoding& s, std::size_t* clamped) {
  switch (head.form) {
    case ScpForm::MuSigma: return scp_forward_musigma(g, head, x, s, clamped);
    case ScpForm::PQ: return scp_forward_pq(g, head, x, s).hadamard;
    case ScpForm::Final: break;
  }
  if (clamped) *clamped = 0;
  return scp_forward_final(g, head, x, s);
}

Tensor with_coords(Graph& g, const Tensor& image, const Tensor& coords) { return concat_channels(g, image, coords); }

Tensor coord_head_forward(Graph& g, const CoordHeadVariant& variant, const Tensor& x, const Tensor& coords) {
  if (variant.kind == CoordKind::BaseF) return base_forward(g, variant.head, x);
  if (!coords.defined() || coords.rank() != 3 || coords.dim(0) != 2) {
    throw DimensionError("coord_head_forward: coords must be [2,H,W]");
  }
  return base_forward(g, variant.head, concat_channels(g, x, coords));
}

std::string_view to_string(HeadVariant v) {
  switch (v) {
    case HeadVariant::Base: return "base";
    case HeadVariant::BaseF: return "basef";
    case HeadVariant::BaseB: return "baseb";
    case HeadVariant::ScpMuSigma: return "scp-musigma";
    case HeadVariant::Scp: return "scp";
  }
  return "?";
}

HeadVariant parse_head_variant(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char ch) { return std::tolower(ch); });
  for (auto v : {HeadVariant::Base, HeadVariant::BaseF, HeadVariant::BaseB, HeadVariant::ScpMuSigma, HeadVariant::Scp}) {
    if (lower == to_string(v)) return v;
  }
  throw ConfigError("unknown head variant '" + std::string(name) + "' (base, basef, baseb, scp-musigma, scp)");
}

NamedTensors Head::parameters() const {
  switch (kind) {
    case HeadVariant::Base:
    case HeadVariant::BaseF:
    case HeadVariant::BaseB: return {{"head.w", shared.w}};
    case HeadVariant::ScpMuSigma:
    case HeadVariant::Scp: break;
  }
  return {{"head.phi.w1", scp.phi.w1}, {"head.phi.w2", scp.phi.w2}, {"head.phi.w3", scp.phi.w3}, {"head.w_r", scp.w_r}};
}

std::size_t Head::param_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : parameters()) n += t.numel();
  return n;
}

Head init_head(HeadVariant kind, std::size_t channels, std::size_t classes, std::size_t hidden, std::uint64_t seed,
               bool zero_init_phi_last) {
  if (channels < 1 || classes < 1 || hidden < 1) throw ConfigError("init_head: C, N and h must be >= 1");
  std::mt19937_64 rng(seed);
  Head head;
  head.kind = kind;
  switch (kind) {
    case HeadVariant::Base:
    case HeadVariant::BaseF:
    case HeadVariant::BaseB: {
      const std::size_t c = kind == HeadVariant::BaseB ? channels + 2 : channels;
      head.shared.w = uniform({c, classes}, 1.0 / std::sqrt(static_cast<double>(c)), rng);
      return head;
    }
    case HeadVariant::ScpMuSigma:
    case HeadVariant::Scp: break;
  }

  const bool musigma = kind == HeadVariant::ScpMuSigma;
  const std::size_t out = musigma ? 2 * channels : classes * channels;
  auto& scp = head.scp;
  scp.form = musigma ? ScpForm::MuSigma : ScpForm::Final;
  // w_r takes the first draws, so it equals Base's w for the same seed
  scp.w_r = uniform({channels, classes}, 1.0 / std::sqrt(static_cast<double>(channels)), rng);
  scp.phi.w1 = uniform({hidden, 4, 1, 1}, 1.0 / std::sqrt(4.0), rng);
  scp.phi.w2 = uniform({hidden, hidden, 1, 1}, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
  scp.phi.w3 = uniform({out, hidden, 1, 1}, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);

  auto w3 = scp.phi.w3.mutable_values();
  if (musigma) {
    // sigma rows act on non-negative hidden units; keep them positive so the
    // initial sigma stays away from the clamp floor
    const std::size_t half = channels * hidden;
    for (std::size_t i = half; i < w3.size(); ++i) w3[i] = std::abs(w3[i]);
    if (zero_init_phi_last) std::fill(w3.begin(), w3.begin() + static_cast<long>(half), real(0));
  } else if (zero_init_phi_last) {
    std::fill(w3.begin(), w3.end(), real(0));
  }
  return head;
}

}  // namespace SCP_PRECISION_NS
}  // namespace scp
