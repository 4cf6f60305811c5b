#pragma once

// Voxel-wise Dice, lesion-wise detection scores and the paired t-test.
//
// Lesions are connected components of a binary mask. A ground-truth lesion
// is detected when it shares at least one pixel with the predicted mask; a
// predicted lesion is a true detection when it shares at least one pixel
// with the ground-truth mask. L-TPR uses the first count, L-PPV the second.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "scp/tensor.hpp"

namespace scp {
inline namespace SCP_PRECISION_NS {

class BinaryMask {
 public:
  BinaryMask(std::size_t height, std::size_t width);
  BinaryMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> bits);
  // Foreground where value > threshold. Accepts [H,W] or [1,H,W].
  static BinaryMask from_tensor(const Tensor& t, double threshold = 0.5);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return bits_.size(); }
  bool operator()(std::size_t i, std::size_t j) const { return bits_[i * width_ + j] != 0; }
  void set(std::size_t i, std::size_t j, bool on = true) { bits_[i * width_ + j] = on ? 1 : 0; }
  std::span<const std::uint8_t> bits() const noexcept { return bits_; }
  std::size_t count() const;
  Tensor to_tensor() const;  // [1,H,W] of 0/1
  bool operator==(const BinaryMask&) const = default;

 private:
  std::size_t height_, width_;
  std::vector<std::uint8_t> bits_;
};

double dice(const BinaryMask& pred, const BinaryMask& gt);

enum class Connectivity { Four, Eight };

struct LesionComponent {
  std::vector<std::size_t> pixels;  // flat row-major indices, ascending
};

// Components ordered by their first pixel in row-major order.
std::vector<LesionComponent> connected_components(const BinaryMask& mask, Connectivity connectivity = Connectivity::Eight);

struct LesionMetricsReport {
  double dice = 1.0;
  double l_dice = 1.0;
  double l_tpr = 1.0;
  double l_ppv = 1.0;
  double l_f1 = 1.0;
  std::size_t tpr_count = 0;       // ground-truth lesions hit
  std::size_t tpr_count_pred = 0;  // predicted lesions that hit ground truth
  std::size_t gl_count = 0;
  std::size_t pl_count = 0;
  bool gt_empty = false;    // l_tpr set by convention
  bool pred_empty = false;  // l_ppv set by convention
};

struct LesionOptions {
  Connectivity connectivity = Connectivity::Eight;
  // 2*TPR/(GL+PL) instead of TPR/(GL+PL)
  bool ldice_doubled = false;
};

LesionMetricsReport lesion_metrics(const BinaryMask& pred, const BinaryMask& gt, const LesionOptions& options = {});

// Arithmetic mean of every score field; counts are summed.
LesionMetricsReport mean_report(std::span<const LesionMetricsReport> reports);

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, LesionMetricsReport>>& rows);

struct TTestResult {
  double t_statistic = 0.0;
  double p_value = 1.0;  // two-tailed
  std::size_t n = 0;
};

// Two-tailed paired t-test on d = a - b with n - 1 degrees of freedom.
TTestResult paired_ttest(std::span<const double> a, std::span<const double> b);

// Regularized incomplete beta I_x(a, b) by continued fraction.
double regularized_incomplete_beta(double a, double b, double x);
double student_t_cdf(double t, double dof);

}  // namespace SCP_PRECISION_NS
}  // namespace scp
