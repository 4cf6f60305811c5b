#include "scp/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "scp/config.hpp"
#include "scp/tensor_io.hpp"

namespace scp {
inline namespace SCP_PRECISION_NS {

namespace {

// Structured phantom semi-axes as fractions of (H, W) and the jitter bound.
constexpr double kStructuredRy = 0.42;
constexpr double kStructuredRx = 0.36;
constexpr double kJitterPx = 2.0;
// Unstructured randomisation; the base size keeps the largest, most
// off-centre organ inside the image.
constexpr double kShiftFrac = 0.25;
constexpr double kScaleMin = 0.7;
constexpr double kScaleMax = 1.3;
constexpr double kUnstructuredRy = 0.19;
constexpr double kUnstructuredRx = 0.16;

constexpr double kLesionRadiusMin = 1.0;
constexpr double kLesionRadiusMax = 4.0;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t sample_seed(std::uint64_t seed, int split, std::size_t index) {
  // chained, not xor-combined: xor is symmetric in (seed, index)
  return splitmix64(splitmix64(splitmix64(seed) + static_cast<std::uint64_t>(split)) + index);
}

double mean_radius(const OrganGeometry& geo) { return 0.5 * (geo.radius_y + geo.radius_x); }

}  // namespace

void SynthSpec::validate() const {
  if (height < 16 || width < 16) throw ConfigError("synth: H and W must be >= 16");
  if (n_train < 1 || n_val < 1 || n_test < 1) throw ConfigError("synth: split sizes must be >= 1");
  if (!(noise_sigma >= 0.0)) throw ConfigError("synth: noise_sigma must be >= 0");
  if (!(lesion_rate > 0.0)) throw ConfigError("synth: lesion_rate must be > 0");
  if (!(lesion_contrast > 0.0)) throw ConfigError("synth: lesion_contrast must be > 0");
  // worst-case organ extent must stay inside the image
  const double h = static_cast<double>(height), w = static_cast<double>(width);
  if (structured) {
    if (kStructuredRy * h + kJitterPx > 0.5 * h - 1.0 || kStructuredRx * w + kJitterPx > 0.5 * w - 1.0) {
      throw ConfigError("synth: image too small for the jittered structured phantom");
    }
  } else {
    const double extent = kScaleMax * std::max(kUnstructuredRy * h, kUnstructuredRx * w);
    if (extent + kShiftFrac * h > 0.5 * h || extent + kShiftFrac * w > 0.5 * w) {
      throw ConfigError("synth: randomised phantom would leave the image");
    }
  }
}

bool apply_synth_key(SynthSpec& spec, const std::string& key, const std::string& value) {
  if (key == "H" || key == "height") spec.height = parse_size(key, value);
  else if (key == "W" || key == "width") spec.width = parse_size(key, value);
  else if (key == "n_train") spec.n_train = parse_size(key, value);
  else if (key == "n_val") spec.n_val = parse_size(key, value);
  else if (key == "n_test") spec.n_test = parse_size(key, value);
  else if (key == "structured") spec.structured = parse_bool(key, value);
  else if (key == "lesion_rate") spec.lesion_rate = parse_double(key, value);
  else if (key == "noise_sigma") spec.noise_sigma = parse_double(key, value);
  else if (key == "lesion_contrast") spec.lesion_contrast = parse_double(key, value);
  else if (key == "synth_seed") spec.seed = parse_u64(key, value);
  else return false;
  return true;
}

double OrganGeometry::rho(double y, double x) const {
  const double dy = y - center_y, dx = x - center_x;
  const double c = std::cos(angle), s = std::sin(angle);
  const double u = c * dy + s * dx;
  const double v = -s * dy + c * dx;
  return std::sqrt((u / radius_y) * (u / radius_y) + (v / radius_x) * (v / radius_x));
}

double tissue_intensity(double rho) {
  if (rho >= 1.0) return 0.0;         // background
  if (rho >= kMiddleRho) return 1.0;  // outer ring
  if (rho >= kCoreRho) return 0.6;    // middle band
  return 0.25;                        // inner core
}

OrganGeometry nominal_geometry(const SynthSpec& spec) {
  OrganGeometry geo;
  geo.center_y = 0.5 * static_cast<double>(spec.height - 1);
  geo.center_x = 0.5 * static_cast<double>(spec.width - 1);
  geo.radius_y = kStructuredRy * static_cast<double>(spec.height);
  geo.radius_x = kStructuredRx * static_cast<double>(spec.width);
  return geo;
}

double structured_lesion_density(const SynthSpec& spec, const OrganGeometry& geo, double rho) {
  if (rho < kCoreRho || rho >= 1.0) return 0.0;
  const double tau = 0.15 * static_cast<double>(std::max(spec.height, spec.width));
  const double r = (rho - kCoreRho) * mean_radius(geo);
  return std::exp(-r / tau);
}

Tensor zscore(const Tensor& image) {
  const auto v = image.values();
  if (v.size() < 2) throw NumericError("zscore: image needs more than one pixel");
  double mean = 0.0;
  for (real x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (real x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  if (!(var > 0.0)) throw NumericError("zscore: image has zero variance");
  const double inv = 1.0 / std::sqrt(var);
  Tensor out(image.shape());
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < v.size(); ++i) o[i] = static_cast<real>((v[i] - mean) * inv);
  return out;
}

Sample generate_sample(const SynthSpec& spec, int split, std::size_t index) {
  const std::size_t h = spec.height, w = spec.width;
  std::mt19937_64 rng(sample_seed(spec.seed, split, index));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Sample s{Tensor(), BinaryMask(h, w), BinaryMask(h, w), {}, {}};
  OrganGeometry& geo = s.geometry;
  if (spec.structured) {
    geo = nominal_geometry(spec);
    std::uniform_int_distribution<int> jitter(-static_cast<int>(kJitterPx), static_cast<int>(kJitterPx));
    geo.center_y += jitter(rng);
    geo.center_x += jitter(rng);
  } else {
    const double scale = kScaleMin + (kScaleMax - kScaleMin) * unit(rng);
    geo.center_y = 0.5 * static_cast<double>(h - 1) + (2.0 * unit(rng) - 1.0) * kShiftFrac * static_cast<double>(h);
    geo.center_x = 0.5 * static_cast<double>(w - 1) + (2.0 * unit(rng) - 1.0) * kShiftFrac * static_cast<double>(w);
    geo.radius_y = scale * kUnstructuredRy * static_cast<double>(h);
    geo.radius_x = scale * kUnstructuredRx * static_cast<double>(w);
    geo.angle = std::numbers::pi * unit(rng);
  }

  std::vector<double> raw(h * w);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const double rho = geo.rho(static_cast<double>(i), static_cast<double>(j));
      raw[i * w + j] = tissue_intensity(rho);
      s.organ.set(i, j, rho < 1.0);
    }
  }

  // lesion centres by rejection sampling over the organ's bounding box
  const double reach = std::max(geo.radius_y, geo.radius_x);
  auto propose = [&]() {
    for (;;) {
      const double y = geo.center_y + (2.0 * unit(rng) - 1.0) * reach;
      const double x = geo.center_x + (2.0 * unit(rng) - 1.0) * reach;
      const double rho = geo.rho(y, x);
      if (rho >= 1.0) continue;
      const double accept = spec.structured ? structured_lesion_density(spec, geo, rho) : 1.0;
      if (unit(rng) < accept) return std::make_pair(y, x);
    }
  };

  std::poisson_distribution<int> lesion_count(spec.lesion_rate);
  const int n_lesions = lesion_count(rng);
  for (int k = 0; k < n_lesions; ++k) {
    const auto [cy, cx] = propose();
    s.lesion_centers.emplace_back(cy, cx);
    const double ra = kLesionRadiusMin + (kLesionRadiusMax - kLesionRadiusMin) * unit(rng);
    const double rb = kLesionRadiusMin + (kLesionRadiusMax - kLesionRadiusMin) * unit(rng);
    const double phi = std::numbers::pi * unit(rng);
    const double c = std::cos(phi), sn = std::sin(phi);
    const double box = std::max(ra, rb) * 1.15 + 1.0;
    const long i0 = std::max(0L, static_cast<long>(std::floor(cy - box)));
    const long i1 = std::min(static_cast<long>(h) - 1, static_cast<long>(std::ceil(cy + box)));
    const long j0 = std::max(0L, static_cast<long>(std::floor(cx - box)));
    const long j1 = std::min(static_cast<long>(w) - 1, static_cast<long>(std::ceil(cx + box)));
    for (long i = i0; i <= i1; ++i) {
      for (long j = j0; j <= j1; ++j) {
        const double dy = static_cast<double>(i) - cy, dx = static_cast<double>(j) - cx;
        const double u = (c * dy + sn * dx) / ra;
        const double v = (-sn * dy + c * dx) / rb;
        const double t = std::sqrt(u * u + v * v);
        // boundary dithering: the rim between 0.85 and 1.15 is included with
        // a linearly falling probability
        const bool inside = t <= 0.85 || (t < 1.15 && unit(rng) < (1.15 - t) / 0.3);
        const auto ui = static_cast<std::size_t>(i), uj = static_cast<std::size_t>(j);
        if (inside && s.organ(ui, uj)) s.mask.set(ui, uj);
      }
    }
  }

  std::normal_distribution<double> noise(0.0, spec.noise_sigma > 0.0 ? spec.noise_sigma : 1.0);
  std::vector<real> pixels(h * w);
  for (std::size_t p = 0; p < h * w; ++p) {
    double v = raw[p];
    if (s.mask.bits()[p]) v += spec.lesion_contrast;
    if (spec.noise_sigma > 0.0) v += noise(rng);
    pixels[p] = static_cast<real>(v);
  }
  s.image = zscore(Tensor({1, h, w}, std::move(pixels)));
  return s;
}

Dataset generate(const SynthSpec& spec) {
  spec.validate();
  Dataset d{spec, {}, {}, {}};
  for (std::size_t i = 0; i < spec.n_train; ++i) d.train.push_back(generate_sample(spec, 0, i));
  for (std::size_t i = 0; i < spec.n_val; ++i) d.val.push_back(generate_sample(spec, 1, i));
  for (std::size_t i = 0; i < spec.n_test; ++i) d.test.push_back(generate_sample(spec, 2, i));
  return d;
}

std::string spec_to_text(const SynthSpec& spec) {
  std::ostringstream os;
  os.precision(17);
  os << "H=" << spec.height << "\nW=" << spec.width << "\nn_train=" << spec.n_train << "\nn_val=" << spec.n_val
     << "\nn_test=" << spec.n_test << "\nstructured=" << (spec.structured ? "true" : "false")
     << "\nlesion_rate=" << spec.lesion_rate << "\nnoise_sigma=" << spec.noise_sigma
     << "\nlesion_contrast=" << spec.lesion_contrast << "\nsynth_seed=" << spec.seed << "\n";
  return os.str();
}

SynthSpec read_spec_file(const std::filesystem::path& path) {
  SynthSpec spec;
  for (const auto& [k, v] : read_key_values(path)) {
    if (!apply_synth_key(spec, k, v)) throw ConfigError(path.string() + ": unknown key '" + k + "'");
  }
  return spec;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
  const std::pair<const char*, const std::vector<Sample>*> splits[] = {
      {"train", &data.train}, {"val", &data.val}, {"test", &data.test}};
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  {
    std::ofstream os(dir / "spec.txt", std::ios::trunc);
    if (!os) throw IoError("cannot write " + (dir / "spec.txt").string());
    os << spec_to_text(data.spec);
  }
  char name[32];
  for (const auto& [split, samples] : splits) {
    const auto sd = dir / split;
    std::filesystem::create_directories(sd, ec);
    if (ec) throw IoError("cannot create " + sd.string() + ": " + ec.message());
    for (std::size_t i = 0; i < samples->size(); ++i) {
      const auto& s = (*samples)[i];
      std::snprintf(name, sizeof name, "img_%05zu.tns", i);
      save_tensor(sd / name, s.image);
      std::snprintf(name, sizeof name, "msk_%05zu.tns", i);
      save_tensor(sd / name, s.mask.to_tensor());
      std::snprintf(name, sizeof name, "org_%05zu.tns", i);
      save_tensor(sd / name, s.organ.to_tensor());
    }
  }
}

std::vector<Sample> load_split(const std::filesystem::path& split_dir) {
  if (!std::filesystem::is_directory(split_dir)) throw IoError("missing split directory: " + split_dir.string());
  std::vector<Sample> out;
  char name[32];
  for (std::size_t i = 0;; ++i) {
    std::snprintf(name, sizeof name, "img_%05zu.tns", i);
    if (!std::filesystem::exists(split_dir / name)) break;
    Tensor image = load_tensor(split_dir / name);
    std::snprintf(name, sizeof name, "msk_%05zu.tns", i);
    if (!std::filesystem::exists(split_dir / name)) throw IoError("missing mask file: " + (split_dir / name).string());
    BinaryMask mask = BinaryMask::from_tensor(load_tensor(split_dir / name));
    std::snprintf(name, sizeof name, "org_%05zu.tns", i);
    BinaryMask organ = std::filesystem::exists(split_dir / name) ? BinaryMask::from_tensor(load_tensor(split_dir / name))
                                                                 : BinaryMask(mask.height(), mask.width());
    out.push_back(Sample{std::move(image), std::move(mask), std::move(organ), {}, {}});
  }
  if (out.empty()) throw IoError("no samples in " + split_dir.string());
  return out;
}

}  // namespace SCP_PRECISION_NS
}  // namespace scp
