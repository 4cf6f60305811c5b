#pragma once

// Analytic complexity accounting and per-pixel statistics of generated
// classifier weights.
//
// FLOP convention: a multiply-accumulate is 2 FLOPs, so a conv costs
// 2 * C_out * C_in * k^2 * H' * W'. Elementwise ops, pooling and reductions
// cost one FLOP per output element (reductions: per input element);
// upsampling and concatenation are free. Peak activation memory is the
// largest total size of simultaneously live forward tensors, 4 bytes each.

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "scp/model.hpp"
#include "scp/tensor.hpp"

namespace scp {
inline namespace SCP_PRECISION_NS {

struct PlanOp {
  enum class Kind { Input, Conv, Elementwise, Pool, Upsample, Concat, Reduce };
  std::string name;
  Kind kind = Kind::Input;
  Shape out;  // output shape
  std::vector<std::size_t> inputs;
  std::size_t params = 0;
  std::size_t flops = 0;
};

// A forward schedule: ops in execution order, inputs refer to earlier ops.
class ModelPlan {
 public:
  std::size_t input(std::string name, Shape shape);
  std::size_t conv(std::string name, std::size_t in, std::size_t c_out, std::size_t kernel, std::size_t stride = 1,
                   std::size_t padding = 0);
  std::size_t elementwise(std::string name, std::vector<std::size_t> inputs, Shape out);
  std::size_t pool(std::string name, std::size_t in);
  std::size_t upsample(std::string name, std::size_t in);
  std::size_t concat(std::string name, std::size_t a, std::size_t b);
  // Sum reduction producing `out`; costs one FLOP per input element.
  std::size_t reduce(std::string name, std::size_t in, std::size_t input_elements, Shape out);

  const std::vector<PlanOp>& ops() const noexcept { return ops_; }
  const PlanOp& op(std::size_t i) const { return ops_.at(i); }

 private:
  std::size_t push(PlanOp op);
  std::vector<PlanOp> ops_;
};

// Mirrors Segmenter::forward for an image of [in_channels,H,W].
ModelPlan plan_model(const ModelConfig& cfg, std::size_t height, std::size_t width);

struct ComplexityReport {
  std::size_t params = 0;
  std::size_t flops = 0;
  std::size_t peak_activation_bytes = 0;
  Shape input_shape;
};

ComplexityReport count_complexity(const ModelPlan& plan);
ComplexityReport count_complexity(const ModelConfig& cfg, std::size_t height, std::size_t width);

std::string format_report_text(const ComplexityReport& r);
std::string format_report_kv(const ComplexityReport& r);

struct StatMap {
  std::vector<double> raw;
  std::vector<double> normalized;  // min-max scaled to [0, 1]
  bool constant = false;           // zero range; normalized is all zeros
};

struct WeightStats {
  std::size_t height = 0, width = 0;
  StatMap max, mean, min, l2, std;  // std is the population std

  static constexpr std::array<const char*, 5> kNames = {"max", "mean", "min", "l2", "std"};
  std::array<const StatMap*, 5> maps() const { return {&max, &mean, &min, &l2, &std}; }
};

// Channel-wise reductions of W [K,H,W] at every pixel.
WeightStats weight_stats(const Tensor& weights);

// 8-bit P5 bytes, value = round(255 * normalized).
std::vector<unsigned char> pgm_pixels(const StatMap& map);
// <dir>/{max,mean,min,l2,std}.pgm and <dir>/stats.csv (i,j,max,mean,min,l2,std)
void export_stats_pgm(const WeightStats& stats, const std::filesystem::path& out_dir);
// Reads stats.csv back into raw maps (normalized recomputed).
WeightStats read_stats_csv(const std::filesystem::path& csv_path);
StatMap normalize_map(std::vector<double> raw);

}  // namespace SCP_PRECISION_NS
}  // namespace scp
