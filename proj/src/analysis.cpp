#include "scp/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace scp {
inline namespace SCP_PRECISION_NS {

// ---- plan ------------------------------------------------------------------

std::size_t ModelPlan::push(PlanOp op) {
  for (auto in : op.inputs) {
    if (in >= ops_.size()) throw ContractError("plan op '" + op.name + "' refers to a later op");
  }
  ops_.push_back(std::move(op));
  return ops_.size() - 1;
}

std::size_t ModelPlan::input(std::string name, Shape shape) {
  return push({std::move(name), PlanOp::Kind::Input, std::move(shape), {}, 0, 0});
}

std::size_t ModelPlan::conv(std::string name, std::size_t in, std::size_t c_out, std::size_t kernel,
                            std::size_t stride, std::size_t padding) {
  const Shape& s = op(in).out;
  const std::size_t ho = (s[1] + 2 * padding - kernel) / stride + 1;
  const std::size_t wo = (s[2] + 2 * padding - kernel) / stride + 1;
  const std::size_t params = c_out * s[0] * kernel * kernel;
  return push({std::move(name), PlanOp::Kind::Conv, {c_out, ho, wo}, {in}, params, 2 * params * ho * wo});
}

std::size_t ModelPlan::elementwise(std::string name, std::vector<std::size_t> inputs, Shape out) {
  const std::size_t n = shape_numel(out);
  return push({std::move(name), PlanOp::Kind::Elementwise, std::move(out), std::move(inputs), 0, n});
}

std::size_t ModelPlan::pool(std::string name, std::size_t in) {
  const Shape& s = op(in).out;
  Shape out = {s[0], s[1] / 2, s[2] / 2};
  const std::size_t n = shape_numel(out);
  return push({std::move(name), PlanOp::Kind::Pool, std::move(out), {in}, 0, n});
}

std::size_t ModelPlan::upsample(std::string name, std::size_t in) {
  const Shape& s = op(in).out;
  return push({std::move(name), PlanOp::Kind::Upsample, {s[0], 2 * s[1], 2 * s[2]}, {in}, 0, 0});
}

std::size_t ModelPlan::concat(std::string name, std::size_t a, std::size_t b) {
  const Shape& sa = op(a).out;
  const Shape& sb = op(b).out;
  return push({std::move(name), PlanOp::Kind::Concat, {sa[0] + sb[0], sa[1], sa[2]}, {a, b}, 0, 0});
}

std::size_t ModelPlan::reduce(std::string name, std::size_t in, std::size_t input_elements, Shape out) {
  return push({std::move(name), PlanOp::Kind::Reduce, std::move(out), {in}, 0, input_elements});
}

ModelPlan plan_model(const ModelConfig& cfg, std::size_t height, std::size_t width) {
  const BackboneConfig bb = cfg.effective_backbone();
  const std::size_t hw = height * width;
  const std::size_t n = cfg.classes;
  ModelPlan plan;
  std::size_t x = plan.input("image", {cfg.backbone.in_channels, height, width});
  if (cfg.head == HeadVariant::BaseF) x = plan.concat("image+coords", x, plan.input("coords", {2, height, width}));

  auto conv_relu = [&](const ConvSpec& layer, std::size_t in) {
    const std::size_t c = plan.conv(layer.name, in, layer.c_out, layer.kernel, 1, layer.kernel / 2);
    return plan.elementwise(layer.name + ".relu", {c}, plan.op(c).out);
  };
  const auto layers = backbone_layers(bb);
  std::size_t next = 0;
  const std::size_t top = bb.depth - 1;
  std::vector<std::size_t> skips;
  for (std::size_t l = 0; l < top; ++l) {
    x = conv_relu(layers[next + 1], conv_relu(layers[next], x));
    next += 2;
    skips.push_back(x);
    x = plan.pool("enc" + std::to_string(l) + ".pool", x);
  }
  x = conv_relu(layers[next + 1], conv_relu(layers[next], x));
  next += 2;
  for (std::size_t l = top; l-- > 0;) {
    const std::size_t up = plan.upsample("dec" + std::to_string(l) + ".up", x);
    x = plan.concat("dec" + std::to_string(l) + ".cat", skips[l], up);
    x = conv_relu(layers[next + 1], conv_relu(layers[next], x));
    next += 2;
  }

  const std::size_t c = bb.feature_channels();
  std::size_t logits = 0;
  switch (cfg.head) {
    case HeadVariant::Base:
    case HeadVariant::BaseF: logits = plan.conv("head.w", x, n, 1); break;
    case HeadVariant::BaseB: {
      const std::size_t cat = plan.concat("head.cat", x, plan.input("coords", {2, height, width}));
      logits = plan.conv("head.w", cat, n, 1);
      break;
    }
    case HeadVariant::ScpMuSigma:
    case HeadVariant::Scp: {
      const std::size_t h = cfg.phi_hidden;
      const bool musigma = cfg.head == HeadVariant::ScpMuSigma;
      std::size_t p = plan.input("positions", {4, height, width});
      p = plan.elementwise("head.phi.relu1", {plan.conv("head.phi.w1", p, h, 1)}, {h, height, width});
      p = plan.elementwise("head.phi.relu2", {plan.conv("head.phi.w2", p, h, 1)}, {h, height, width});
      const std::size_t out = musigma ? 2 * c : n * c;
      const std::size_t weights = plan.conv("head.phi.w3", p, out, 1);
      if (musigma) {
        const std::size_t centred = plan.elementwise("head.sub_mu", {x, weights}, {c, height, width});
        const std::size_t sigma = plan.elementwise("head.clamp_sigma", {weights}, {c, height, width});
        const std::size_t z = plan.elementwise("head.div_sigma", {centred, sigma}, {c, height, width});
        logits = plan.conv("head.w_r", z, n, 1);
      } else {
        const std::size_t prod = plan.elementwise("head.mul", {weights, x}, {n * c, height, width});
        const std::size_t cov = plan.reduce("head.sum_c", prod, n * c * hw, {n, height, width});
        const std::size_t shared = plan.conv("head.w_r", x, n, 1);
        logits = plan.elementwise("head.residual_add", {shared, cov}, {n, height, width});
      }
      break;
    }
  }
  plan.elementwise("sigmoid", {logits}, {n, height, width});
  return plan;
}

ComplexityReport count_complexity(const ModelPlan& plan) {
  const auto& ops = plan.ops();
  ComplexityReport r;
  std::vector<std::size_t> last_use(ops.size());
  for (std::size_t i = 0; i < ops.size(); ++i) {
    last_use[i] = i;
    r.params += ops[i].params;
    r.flops += ops[i].flops;
    for (auto in : ops[i].inputs) last_use[in] = std::max(last_use[in], i);
    if (ops[i].kind == PlanOp::Kind::Input && r.input_shape.empty()) r.input_shape = ops[i].out;
  }
  std::size_t peak = 0;
  for (std::size_t t = 0; t < ops.size(); ++t) {
    std::size_t live = 0;
    for (std::size_t i = 0; i <= t; ++i) {
      if (last_use[i] >= t) live += shape_numel(ops[i].out);
    }
    peak = std::max(peak, live);
  }
  r.peak_activation_bytes = 4 * peak;
  return r;
}

ComplexityReport count_complexity(const ModelConfig& cfg, std::size_t height, std::size_t width) {
  return count_complexity(plan_model(cfg, height, width));
}

std::string format_report_text(const ComplexityReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "input          %s\nparams         %12zu\nflops          %12zu\npeak_act_bytes %12zu\n",
                shape_string(r.input_shape).c_str(), r.params, r.flops, r.peak_activation_bytes);
  return buf;
}

std::string format_report_kv(const ComplexityReport& r) {
  std::ostringstream os;
  os << "input_shape=";
  for (std::size_t i = 0; i < r.input_shape.size(); ++i) os << (i ? "x" : "") << r.input_shape[i];
  os << "\nparams=" << r.params << "\nflops=" << r.flops << "\npeak_activation_bytes=" << r.peak_activation_bytes
     << "\n";
  return os.str();
}

// ---- weight statistics -----------------------------------------------------

StatMap normalize_map(std::vector<double> raw) {
  StatMap m;
  m.raw = std::move(raw);
  m.normalized.assign(m.raw.size(), 0.0);
  if (m.raw.empty()) return m;
  const auto [lo, hi] = std::minmax_element(m.raw.begin(), m.raw.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) {
    m.constant = true;
    return m;
  }
  for (std::size_t i = 0; i < m.raw.size(); ++i) m.normalized[i] = (m.raw[i] - *lo) / range;
  return m;
}

WeightStats weight_stats(const Tensor& weights) {
  if (!weights.defined() || weights.rank() != 3) throw DimensionError("weight_stats: expected [K,H,W]");
  const std::size_t k = weights.dim(0), h = weights.dim(1), w = weights.dim(2);
  const std::size_t plane = h * w;
  auto v = weights.values();
  std::vector<double> mx(plane), mn(plane), avg(plane), l2(plane), sd(plane);
  for (std::size_t p = 0; p < plane; ++p) {
    double hi = v[p], lo = v[p], s = 0.0, sq = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const double x = v[c * plane + p];
      hi = std::max(hi, x);
      lo = std::min(lo, x);
      s += x;
      sq += x * x;
    }
    const double m = s / static_cast<double>(k);
    double var = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const double d = v[c * plane + p] - m;
      var += d * d;
    }
    mx[p] = hi;
    mn[p] = lo;
    avg[p] = m;
    l2[p] = std::sqrt(sq);
    sd[p] = std::sqrt(var / static_cast<double>(k));
  }
  WeightStats st;
  st.height = h;
  st.width = w;
  st.max = normalize_map(std::move(mx));
  st.mean = normalize_map(std::move(avg));
  st.min = normalize_map(std::move(mn));
  st.l2 = normalize_map(std::move(l2));
  st.std = normalize_map(std::move(sd));
  return st;
}

std::vector<unsigned char> pgm_pixels(const StatMap& map) {
  std::vector<unsigned char> px(map.normalized.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    px[i] = static_cast<unsigned char>(std::clamp(std::lround(255.0 * map.normalized[i]), 0L, 255L));
  }
  return px;
}

void export_stats_pgm(const WeightStats& stats, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  const auto maps = stats.maps();
  for (std::size_t m = 0; m < maps.size(); ++m) {
    const auto path = out_dir / (std::string(WeightStats::kNames[m]) + ".pgm");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + path.string());
    os << "P5\n" << stats.width << ' ' << stats.height << "\n255\n";
    const auto px = pgm_pixels(*maps[m]);
    os.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
    if (!os) throw IoError("write failed: " + path.string());
  }
  const auto csv = out_dir / "stats.csv";
  std::ofstream os(csv, std::ios::trunc);
  if (!os) throw IoError("cannot write " + csv.string());
  os << "i,j,max,mean,min,l2,std\n";
  char buf[320];
  for (std::size_t i = 0; i < stats.height; ++i) {
    for (std::size_t j = 0; j < stats.width; ++j) {
      const std::size_t p = i * stats.width + j;
      std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g,%.9g,%.9g,%.9g\n", i, j, stats.max.raw[p], stats.mean.raw[p],
                    stats.min.raw[p], stats.l2.raw[p], stats.std.raw[p]);
      os << buf;
    }
  }
  if (!os) throw IoError("write failed: " + csv.string());
}

WeightStats read_stats_csv(const std::filesystem::path& csv_path) {
  std::ifstream is(csv_path);
  if (!is) throw IoError("cannot read " + csv_path.string());
  std::string line;
  std::getline(is, line);
  std::vector<std::size_t> is_, js;
  std::array<std::vector<double>, 5> cols;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 7) throw IoError("malformed stats row in " + csv_path.string() + ": " + line);
    is_.push_back(std::stoul(cells[0]));
    js.push_back(std::stoul(cells[1]));
    for (std::size_t k = 0; k < 5; ++k) cols[k].push_back(std::stod(cells[2 + k]));
  }
  if (is_.empty()) throw IoError("empty stats file " + csv_path.string());
  WeightStats st;
  st.height = *std::max_element(is_.begin(), is_.end()) + 1;
  st.width = *std::max_element(js.begin(), js.end()) + 1;
  if (st.height * st.width != is_.size()) throw IoError("stats file is not a full grid: " + csv_path.string());
  std::array<std::vector<double>, 5> grid;
  for (auto& g : grid) g.assign(is_.size(), 0.0);
  for (std::size_t r = 0; r < is_.size(); ++r) {
    for (std::size_t k = 0; k < 5; ++k) grid[k][is_[r] * st.width + js[r]] = cols[k][r];
  }
  st.max = normalize_map(std::move(grid[0]));
  st.mean = normalize_map(std::move(grid[1]));
  st.min = normalize_map(std::move(grid[2]));
  st.l2 = normalize_map(std::move(grid[3]));
  st.std = normalize_map(std::move(grid[4]));
  return st;
}

}  // namespace SCP_PRECISION_NS
}  // namespace scp
