#include "scp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace scp {
inline namespace SCP_PRECISION_NS {

BinaryMask::BinaryMask(std::size_t height, std::size_t width)
    : height_(height), width_(width), bits_(height * width, 0) {}

BinaryMask::BinaryMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> bits)
    : height_(height), width_(width), bits_(std::move(bits)) {
  if (bits_.size() != height_ * width_) throw DimensionError("BinaryMask: bit count does not match H*W");
  for (auto& b : bits_) b = b ? 1 : 0;
}

BinaryMask BinaryMask::from_tensor(const Tensor& t, double threshold) {
  std::size_t h = 0, w = 0;
  if (t.rank() == 2) {
    h = t.dim(0);
    w = t.dim(1);
  } else if (t.rank() == 3 && t.dim(0) == 1) {
    h = t.dim(1);
    w = t.dim(2);
  } else {
    throw DimensionError("BinaryMask::from_tensor: expected [H,W] or [1,H,W], got " + shape_string(t.shape()));
  }
  std::vector<std::uint8_t> bits(h * w);
  auto v = t.values();
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = static_cast<double>(v[i]) > threshold ? 1 : 0;
  return BinaryMask(h, w, std::move(bits));
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

Tensor BinaryMask::to_tensor() const {
  std::vector<real> v(bits_.begin(), bits_.end());
  return Tensor({1, height_, width_}, std::move(v));
}

namespace {
void require_same_shape(const BinaryMask& a, const BinaryMask& b, const char* who) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw DimensionError(std::string(who) + ": mask shapes differ");
  }
}
}  // namespace

double dice(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_shape(pred, gt, "dice");
  std::size_t inter = 0, sa = 0, sb = 0;
  auto a = pred.bits();
  auto b = gt.bits();
  for (std::size_t i = 0; i < a.size(); ++i) {
    sa += a[i];
    sb += b[i];
    inter += a[i] & b[i];
  }
  if (sa + sb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(sa + sb);
}

std::vector<LesionComponent> connected_components(const BinaryMask& mask, Connectivity connectivity) {
  const std::size_t h = mask.height(), w = mask.width();
  std::vector<std::uint8_t> seen(h * w, 0);
  std::vector<LesionComponent> out;
  std::vector<std::size_t> stack;
  const int reach = 1;
  for (std::size_t start = 0; start < h * w; ++start) {
    if (!mask.bits()[start] || seen[start]) continue;
    LesionComponent comp;
    stack.assign(1, start);
    seen[start] = 1;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      comp.pixels.push_back(p);
      const long pi = static_cast<long>(p / w), pj = static_cast<long>(p % w);
      for (int di = -reach; di <= reach; ++di) {
        for (int dj = -reach; dj <= reach; ++dj) {
          if (di == 0 && dj == 0) continue;
          if (connectivity == Connectivity::Four && di != 0 && dj != 0) continue;
          const long ni = pi + di, nj = pj + dj;
          if (ni < 0 || nj < 0 || ni >= static_cast<long>(h) || nj >= static_cast<long>(w)) continue;
          const std::size_t q = static_cast<std::size_t>(ni) * w + static_cast<std::size_t>(nj);
          if (mask.bits()[q] && !seen[q]) {
            seen[q] = 1;
            stack.push_back(q);
          }
        }
      }
    }
    std::sort(comp.pixels.begin(), comp.pixels.end());
    out.push_back(std::move(comp));
  }
  return out;
}

LesionMetricsReport lesion_metrics(const BinaryMask& pred, const BinaryMask& gt, const LesionOptions& options) {
  require_same_shape(pred, gt, "lesion_metrics");
  LesionMetricsReport r;
  r.dice = dice(pred, gt);

  auto hits = [](const std::vector<LesionComponent>& comps, const BinaryMask& other) {
    std::size_t n = 0;
    for (const auto& c : comps) {
      if (std::any_of(c.pixels.begin(), c.pixels.end(), [&](std::size_t p) { return other.bits()[p] != 0; })) ++n;
    }
    return n;
  };
  const auto gt_comps = connected_components(gt, options.connectivity);
  const auto pred_comps = connected_components(pred, options.connectivity);
  r.gl_count = gt_comps.size();
  r.pl_count = pred_comps.size();
  r.tpr_count = hits(gt_comps, pred);
  r.tpr_count_pred = hits(pred_comps, gt);

  r.gt_empty = r.gl_count == 0;
  r.pred_empty = r.pl_count == 0;
  r.l_tpr = r.gt_empty ? 1.0 : static_cast<double>(r.tpr_count) / static_cast<double>(r.gl_count);
  if (!r.pred_empty) {
    r.l_ppv = static_cast<double>(r.tpr_count_pred) / static_cast<double>(r.pl_count);
  } else {
    r.l_ppv = r.gt_empty ? 1.0 : 0.0;
  }
  const double denom = r.l_tpr + r.l_ppv;
  r.l_f1 = denom > 0.0 ? 2.0 * r.l_tpr * r.l_ppv / denom : 0.0;
  if (r.gl_count + r.pl_count == 0) {
    r.l_dice = 1.0;
  } else {
    const double factor = options.ldice_doubled ? 2.0 : 1.0;
    r.l_dice = factor * static_cast<double>(r.tpr_count) / static_cast<double>(r.gl_count + r.pl_count);
  }
  return r;
}

LesionMetricsReport mean_report(std::span<const LesionMetricsReport> reports) {
  LesionMetricsReport m{};
  if (reports.empty()) return m;
  m = LesionMetricsReport{0, 0, 0, 0, 0, 0, 0, 0, 0, false, false};
  for (const auto& r : reports) {
    m.dice += r.dice;
    m.l_dice += r.l_dice;
    m.l_tpr += r.l_tpr;
    m.l_ppv += r.l_ppv;
    m.l_f1 += r.l_f1;
    m.tpr_count += r.tpr_count;
    m.tpr_count_pred += r.tpr_count_pred;
    m.gl_count += r.gl_count;
    m.pl_count += r.pl_count;
  }
  const double n = static_cast<double>(reports.size());
  m.dice /= n;
  m.l_dice /= n;
  m.l_tpr /= n;
  m.l_ppv /= n;
  m.l_f1 /= n;
  return m;
}

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, LesionMetricsReport>>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "case,dice,l_dice,l_tpr,l_ppv,l_f1,tpr,gl,pl\n";
  char buf[256];
  for (const auto& [name, r] : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%zu,%zu,%zu\n", name.c_str(), r.dice, r.l_dice,
                  r.l_tpr, r.l_ppv, r.l_f1, r.tpr_count, r.gl_count, r.pl_count);
    os << buf;
  }
  if (!os) throw IoError("write failed: " + path.string());
}

namespace {

// Continued fraction for I_x(a,b), modified Lentz.
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw StatisticsError("incomplete beta continued fraction did not converge");
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (a <= 0.0 || b <= 0.0) throw StatisticsError("incomplete beta needs a, b > 0");
  if (x < 0.0 || x > 1.0) throw StatisticsError("incomplete beta needs x in [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double dof) {
  if (dof <= 0.0) throw StatisticsError("t distribution needs positive degrees of freedom");
  const double tail = 0.5 * regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t));
  return t >= 0.0 ? 1.0 - tail : tail;
}

TTestResult paired_ttest(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw StatisticsError("paired_ttest: samples have different lengths");
  const std::size_t n = a.size();
  if (n < 2) throw StatisticsError("paired_ttest: need at least 2 pairs");
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i] - mean;
    ss += d * d;
  }
  const double var = ss / static_cast<double>(n - 1);
  if (!(var > 0.0)) throw StatisticsError("paired_ttest: differences have zero variance");
  TTestResult r;
  r.n = n;
  r.t_statistic = mean / std::sqrt(var / static_cast<double>(n));
  const double dof = static_cast<double>(n - 1);
  r.p_value = std::clamp(regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + r.t_statistic * r.t_statistic)),
                         0.0, 1.0);
  return r;
}

}  // namespace SCP_PRECISION_NS
}  // namespace scp
