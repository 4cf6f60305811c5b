#pragma once

// Central finite-difference gradient checker. Meant for the 64-bit build of
// the library (SCP_REAL_DOUBLE).

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "scp/tensor.hpp"

namespace gradcheck {
// per precision, like the library, so float and double users can share a binary
inline namespace SCP_PRECISION_NS {

struct Result {
  double max_rel = 0;
  std::size_t checked = 0;
  std::size_t kinks = 0;     // coordinates skipped as non-differentiable
  std::size_t resolved = 0;  // kinks at eps that checked out at a tiny step
  std::string worst;
  double worst_analytic = 0, worst_numeric = 0;
};

inline constexpr double kRelFloor = 1e-4;

// |a - n| / max(|a|, |n|, kRelFloor)
inline double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kRelFloor});
}

// `loss` must build a scalar from the named leaves. A coordinate is a kink
// (a ReLU, clamp or max switching inside the probe interval) when the
// differences at eps and eps/2 are inconsistent with a smooth function:
// the central differences disagree, or the forward/backward asymmetry does
// not halve with the step. Kinks are counted, not checked.
inline Result check(const std::function<scp::Tensor(scp::Graph&)>& loss,
                    std::vector<std::pair<std::string, scp::Tensor>> params, double eps = 1e-3) {
  for (auto& [name, t] : params) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    scp::Graph g;
    g.backward(loss(g));
  }
  auto eval = [&] {
    scp::Graph g(false);
    return static_cast<double>(loss(g).item());
  };
  const double f0 = eval();
  Result r;
  for (auto& [name, t] : params) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    for (std::size_t k = 0; k < t.numel(); ++k) {
      const double v = t.values()[k];
      auto at = [&](double h) {
        t.mutable_values()[k] = static_cast<scp::real>(v + h);
        const double f = eval();
        t.mutable_values()[k] = static_cast<scp::real>(v);
        return f;
      };
      const double up1 = at(eps), down1 = at(-eps), up2 = at(eps / 2), down2 = at(-eps / 2);
      const double n1 = (up1 - down1) / (2 * eps), n2 = (up2 - down2) / eps;
      const double asym1 = (up1 - f0) / eps - (f0 - down1) / eps;
      const double asym2 = (up2 - f0) / (eps / 2) - (f0 - down2) / (eps / 2);
      const double scale = std::max({std::abs(n1), std::abs(analytic[k]), kRelFloor});
      double numeric = n1;
      if (std::abs(n1 - n2) > 1e-4 * scale || std::abs(asym1 - 2 * asym2) > 1e-4 * scale) {
        // retry with a step far below the switch distance of most kinks;
        // still a kink if that step straddles one too
        const double tiny = 1e-7;
        const double u = at(tiny), d = at(-tiny);
        const double fwd = (u - f0) / tiny, bwd = (f0 - d) / tiny;
        if (std::abs(fwd - bwd) > 1e-4 * scale) {
          ++r.kinks;
          continue;
        }
        numeric = (u - d) / (2 * tiny);
        ++r.resolved;
      }
      const double e = rel_error(analytic[k], numeric);
      ++r.checked;
      if (e > r.max_rel) {
        r.max_rel = e;
        r.worst = name + "[" + std::to_string(k) + "]";
        r.worst_analytic = analytic[k];
        r.worst_numeric = numeric;
      }
    }
  }
  return r;
}

// Scalar probe of an arbitrary output: sum(out o weights) with fixed
// random weights, so every output element contributes a distinct slope.
inline scp::Tensor project(scp::Graph& g, const scp::Tensor& out, const scp::Tensor& weights) {
  return scp::sum(g, scp::mul(g, out, weights));
}

}  // namespace SCP_PRECISION_NS
}  // namespace gradcheck
