#pragma once

// Synthetic (image, lesion mask) cohorts with controllable spatial structure.
//
// Every image shows an elliptical "organ" phantom made of three nested
// tissue bands (outer ring, middle band, inner core) on a zero background.
// Structured cohorts share one geometry up to a small jitter, and lesion
// centres concentrate around the inner core. Unstructured cohorts move,
// rotate and rescale the organ per sample and place lesions uniformly
// inside it.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scp/metrics.hpp"
#include "scp/tensor.hpp"

namespace scp {
inline namespace SCP_PRECISION_NS {

struct SynthSpec {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t n_train = 200;
  std::size_t n_val = 40;
  std::size_t n_test = 60;
  bool structured = true;
  double lesion_rate = 3.0;       // expected lesions per image
  double noise_sigma = 0.1;       // additive Gaussian noise, raw units
  double lesion_contrast = 0.15;  // lesion brightness over local tissue, raw units
  std::uint64_t seed = 0;

  // Throws ConfigError; also rejects sizes where the phantom cannot fit.
  void validate() const;
};

// Applies one `key=value` setting; false when the key is not a SynthSpec field.
bool apply_synth_key(SynthSpec& spec, const std::string& key, const std::string& value);

// Phantom geometry in pixel units.
struct OrganGeometry {
  double center_y = 0, center_x = 0;
  double radius_y = 0, radius_x = 0;  // outer boundary semi-axes
  double angle = 0;                   // rotation of the axes, radians

  // Normalised elliptical radius: < 1 inside the organ.
  double rho(double y, double x) const;
};

inline constexpr double kCoreRho = 0.35;    // inner core: rho < kCoreRho
inline constexpr double kMiddleRho = 0.80;  // middle band: kCoreRho <= rho < kMiddleRho

// Raw tissue intensity at normalised radius rho.
double tissue_intensity(double rho);

// The structured-mode geometry without jitter.
OrganGeometry nominal_geometry(const SynthSpec& spec);

// Areal lesion-centre density (unnormalised) at rho for structured cohorts:
// exp(-r / tau), r the distance in pixels outside the inner core,
// tau = 0.15 * max(H, W). Zero inside the core and outside the organ.
double structured_lesion_density(const SynthSpec& spec, const OrganGeometry& geo, double rho);

struct Sample {
  Tensor image;  // [1,H,W], z-scored
  BinaryMask mask;
  BinaryMask organ;
  OrganGeometry geometry;
  std::vector<std::pair<double, double>> lesion_centers;  // (y, x) of every sampled lesion
};

struct Dataset {
  SynthSpec spec;
  std::vector<Sample> train, val, test;
};

Dataset generate(const SynthSpec& spec);

// One sample; split 0/1/2 = train/val/test. Pure function of its arguments.
Sample generate_sample(const SynthSpec& spec, int split, std::size_t index);

// Per-image standardisation to zero mean and unit population std.
Tensor zscore(const Tensor& image);

// <dir>/{train,val,test}/{img,msk,org}_%05d.tns and <dir>/spec.txt
void write_dataset(const std::filesystem::path& dir, const Dataset& data);
std::vector<Sample> load_split(const std::filesystem::path& split_dir);
SynthSpec read_spec_file(const std::filesystem::path& path);
std::string spec_to_text(const SynthSpec& spec);

}  // namespace SCP_PRECISION_NS
}  // namespace scp
