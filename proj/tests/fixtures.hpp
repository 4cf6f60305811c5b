#pragma once

// Seeded random instances shared by the test binaries. Compiles against
// either precision of the library.

#include <cmath>
#include <cstdint>
#include <random>

#include "scp/heads.hpp"
#include "scp/posenc.hpp"
#include "scp/tensor.hpp"

namespace fixtures {
// per precision, like the library, so float and double users can share a binary
inline namespace SCP_PRECISION_NS {

using scp::real;
using scp::Shape;
using scp::Tensor;

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0, bool grad = false) {
  std::normal_distribution<double> d(0.0, scale);
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_values()) v = static_cast<real>(d(rng));
  if (grad) t.set_requires_grad(true);
  return t;
}

inline Tensor uniform_tensor(Shape shape, std::mt19937_64& rng, double lo, double hi, bool grad = false) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_values()) v = static_cast<real>(d(rng));
  if (grad) t.set_requires_grad(true);
  return t;
}

// Phi with every weight drawn at random (no zero-initialised last layer).
inline scp::PhiNet random_phi(std::size_t hidden, std::size_t out, std::mt19937_64& rng, double scale = 0.5) {
  scp::PhiNet phi;
  phi.w1 = random_tensor({hidden, 4, 1, 1}, rng, scale, true);
  phi.w2 = random_tensor({hidden, hidden, 1, 1}, rng, scale / std::sqrt(double(hidden)), true);
  phi.w3 = random_tensor({out, hidden, 1, 1}, rng, scale / std::sqrt(double(hidden)), true);
  return phi;
}

inline scp::ScpHead random_scp_head(std::size_t c, std::size_t n, std::size_t hidden, std::mt19937_64& rng,
                                    scp::ScpForm form = scp::ScpForm::Final) {
  scp::ScpHead head;
  head.form = form;
  head.phi = random_phi(hidden, form == scp::ScpForm::Final ? n * c : 2 * c, rng);
  head.w_r = random_tensor({c, n}, rng, 1.0, true);
  return head;
}

// Cyclic shift of the last two axes of a [C,H,W] tensor by (dy, dx).
inline Tensor cyclic_shift(const Tensor& x, std::size_t dy, std::size_t dx) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor out(x.shape());
  auto o = out.mutable_values();
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) o[(k * h + (i + dy) % h) * w + (j + dx) % w] = x.at(k, i, j);
  return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  const auto va = a.values(), vb = b.values();
  if (va.size() != vb.size()) return INFINITY;
  for (std::size_t i = 0; i < va.size(); ++i) m = std::max(m, std::abs(double(va[i]) - double(vb[i])));
  return m;
}

}  // namespace SCP_PRECISION_NS
}  // namespace fixtures
