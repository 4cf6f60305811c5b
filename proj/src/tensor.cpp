#include "scp/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <numeric>
#include <sstream>

namespace scp {
inline namespace SCP_PRECISION_NS {

namespace {

using MatR = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

void require_rank(const Tensor& t, std::size_t rank, std::string_view op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_string(t.shape()));
  }
}

std::vector<real> copy_values(const Tensor& t) {
  auto v = t.values();
  return {v.begin(), v.end()};
}

#if defined(__GLIBC__)
// Activation-sized buffers are allocated and released on every step. Keeping
// them in the heap rather than in fresh mmap'd pages (which are zeroed and
// faulted in again each time) roughly halves training time.
const bool kAllocatorTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  return true;
}();
#endif

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor(Shape shape, real fill) : Tensor(shape, std::vector<real>(shape_numel(shape), fill)) {}

Tensor::Tensor(Shape shape, std::vector<real> values) : shape_(std::move(shape)) {
  if (shape_.empty()) throw DimensionError("tensor shape must have at least one dimension");
  for (auto d : shape_) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_string(shape_));
  }
  if (shape_numel(shape_) != values.size()) {
    throw DimensionError("shape " + shape_string(shape_) + " does not match " + std::to_string(values.size()) +
                         " values");
  }
  storage_ = std::make_shared<detail::Storage>();
  storage_->data = std::move(values);
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw DimensionError("axis out of range for shape " + shape_string(shape_));
  return shape_[axis];
}

std::span<const real> Tensor::values() const {
  if (!storage_) return {};
  return storage_->data;
}

std::span<real> Tensor::mutable_values() {
  if (!storage_) return {};
  return storage_->data;
}

real Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape_));
  return storage_->data[0];
}

std::size_t Tensor::flat_index(std::span<const std::size_t> index) const {
  if (index.size() != shape_.size()) throw DimensionError("index rank mismatch for " + shape_string(shape_));
  std::size_t flat = 0;
  for (std::size_t d = 0; d < shape_.size(); ++d) {
    if (index[d] >= shape_[d]) throw DimensionError("index out of range for " + shape_string(shape_));
    flat = flat * shape_[d] + index[d];
  }
  return flat;
}

Tensor& Tensor::set_requires_grad(bool on) {
  if (!storage_) throw ContractError("set_requires_grad on undefined tensor");
  storage_->requires_grad = on;
  return *this;
}

std::span<const real> Tensor::grad() const {
  if (!storage_) return {};
  return storage_->grad;
}

std::span<real> Tensor::mutable_grad() {
  if (!storage_) return {};
  if (storage_->grad.size() != storage_->data.size()) storage_->grad.assign(storage_->data.size(), real(0));
  return storage_->grad;
}

void Tensor::zero_grad() {
  if (storage_ && !storage_->grad.empty()) std::fill(storage_->grad.begin(), storage_->grad.end(), real(0));
}

Tensor Tensor::reshape(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_string(shape));
  }
  Tensor view;
  view.shape_ = std::move(shape);
  view.storage_ = storage_;
  return view;
}

Tensor Tensor::clone() const { return Tensor(shape_, copy_values(*this)); }

// ---- Graph -----------------------------------------------------------------

bool Graph::needs_grad(const Tensor& t) const {
  if (!t.defined()) return false;
  return t.requires_grad() || node_of_.contains(t.storage_id());
}

Tensor Graph::record(std::string_view kind, Tensor out, std::initializer_list<Tensor> inputs, BackwardFn fn) {
  if (!recording_) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(), [&](const Tensor& t) { return needs_grad(t); });
  if (!any) return out;

  Node node;
  node.kind = kind;
  node.output = out.storage();
  for (const auto& in : inputs) {
    node.inputs.push_back(in.storage());
    auto it = node_of_.find(in.storage_id());
    node.input_nodes.push_back(it == node_of_.end() ? -1 : it->second);
    if (it == node_of_.end() && in.requires_grad() &&
        std::none_of(leaves_.begin(), leaves_.end(),
                     [&](const Tensor& l) { return l.storage_id() == in.storage_id(); })) {
      leaves_.push_back(in);
    }
  }
  node.backward = std::move(fn);
  node_of_[out.storage_id()] = static_cast<long>(nodes_.size());
  nodes_.push_back(std::move(node));
  return out;
}

void Graph::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  std::vector<std::vector<real>> buffers(nodes_.size());

  auto grad_ptr = [&](const std::shared_ptr<detail::Storage>& s) -> real* {
    if (s->requires_grad) {
      if (s->grad.size() != s->data.size()) s->grad.assign(s->data.size(), real(0));
      return s->grad.data();
    }
    auto it = node_of_.find(s.get());
    if (it == node_of_.end()) return nullptr;
    auto& buf = buffers[static_cast<std::size_t>(it->second)];
    if (buf.empty()) buf.assign(s->data.size(), real(0));
    return buf.data();
  };

  real* seed = grad_ptr(loss.storage());
  if (seed == nullptr) return;
  seed[0] += real(1);

  std::vector<real*> grad_in;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    const auto& node = nodes_[i];
    if (buffers[i].empty()) continue;
    grad_in.clear();
    for (const auto& in : node.inputs) grad_in.push_back(grad_ptr(in));
    node.backward(buffers[i], grad_in);
  }
}

// ---- convolution -----------------------------------------------------------

namespace {

struct ConvGeometry {
  std::size_t c_in, h, w, c_out, k, ho, wo;
  int stride, pad;
  std::size_t rows() const { return c_in * k * k; }
  std::size_t cols() const { return ho * wo; }
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

// Output columns oj whose input column oj*stride + kj - pad lies in [0, w).
std::pair<std::size_t, std::size_t> valid_columns(const ConvGeometry& g, std::size_t kj) {
  const long off = static_cast<long>(kj) - g.pad;
  const long s = g.stride;
  long lo = off >= 0 ? 0 : (-off + s - 1) / s;
  long hi = (static_cast<long>(g.w) - 1 - off) / s + 1;
  if (static_cast<long>(g.w) - 1 - off < 0) hi = 0;
  hi = std::min(hi, static_cast<long>(g.wo));
  lo = std::min(lo, hi);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

void im2col(const real* x, const ConvGeometry& g, real* cols) {
  const std::size_t n = g.cols();
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        real* row = cols + ((c * g.k + ki) * g.k + kj) * n;
        const auto [lo, hi] = valid_columns(g, kj);
        const long off = static_cast<long>(kj) - g.pad;
        for (std::size_t oi = 0; oi < g.ho; ++oi) {
          const long ii = static_cast<long>(oi) * g.stride + static_cast<long>(ki) - g.pad;
          real* dst = row + oi * g.wo;
          if (ii < 0 || ii >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.wo, real(0));
            continue;
          }
          const real* src = x + (c * g.h + static_cast<std::size_t>(ii)) * g.w;
          std::fill(dst, dst + lo, real(0));
          std::fill(dst + hi, dst + g.wo, real(0));
          if (g.stride == 1) {
            std::copy(src + static_cast<long>(lo) + off, src + static_cast<long>(hi) + off, dst + lo);
          } else {
            for (std::size_t oj = lo; oj < hi; ++oj) dst[oj] = src[static_cast<long>(oj) * g.stride + off];
          }
        }
      }
    }
  }
}

void col2im_add(const real* cols, const ConvGeometry& g, real* x) {
  const std::size_t n = g.cols();
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const real* row = cols + ((c * g.k + ki) * g.k + kj) * n;
        const auto [lo, hi] = valid_columns(g, kj);
        const long off = static_cast<long>(kj) - g.pad;
        for (std::size_t oi = 0; oi < g.ho; ++oi) {
          const long ii = static_cast<long>(oi) * g.stride + static_cast<long>(ki) - g.pad;
          if (ii < 0 || ii >= static_cast<long>(g.h)) continue;
          real* dst = x + (c * g.h + static_cast<std::size_t>(ii)) * g.w;
          const real* src = row + oi * g.wo;
          if (g.stride == 1) {
            real* d = dst + off;
            for (std::size_t oj = lo; oj < hi; ++oj) d[oj] += src[oj];
          } else {
            for (std::size_t oj = lo; oj < hi; ++oj) dst[static_cast<long>(oj) * g.stride + off] += src[oj];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(Graph& g, const Tensor& input, const Tensor& weight, int stride, int padding) {
  require_rank(input, 3, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (weight.dim(1) != input.dim(0)) {
    throw DimensionError("conv2d: weight expects " + std::to_string(weight.dim(1)) + " input channels, input " +
                         shape_string(input.shape()) + " has " + std::to_string(input.dim(0)));
  }
  if (weight.dim(2) != weight.dim(3) || weight.dim(2) % 2 == 0) {
    throw ContractError("conv2d: kernel must be square with odd size, got " + shape_string(weight.shape()));
  }
  if (stride != 1 && stride != 2) throw ContractError("conv2d: stride must be 1 or 2");
  if (padding < 0) throw ContractError("conv2d: negative padding");

  ConvGeometry geo{};
  geo.c_in = input.dim(0);
  geo.h = input.dim(1);
  geo.w = input.dim(2);
  geo.c_out = weight.dim(0);
  geo.k = weight.dim(2);
  geo.stride = stride;
  geo.pad = padding;
  const long span_h = static_cast<long>(geo.h) + 2 * padding - static_cast<long>(geo.k);
  const long span_w = static_cast<long>(geo.w) + 2 * padding - static_cast<long>(geo.k);
  if (span_h < 0 || span_w < 0) throw DimensionError("conv2d: kernel larger than padded input");
  geo.ho = static_cast<std::size_t>(span_h / stride + 1);
  geo.wo = static_cast<std::size_t>(span_w / stride + 1);

  // im2col writes every entry, so the buffer is left uninitialised
  std::shared_ptr<const real[]> cols;
  if (geo.pointwise()) {
    cols = std::shared_ptr<const real[]>(input.storage(), input.storage()->data.data());
  } else {
    std::shared_ptr<real[]> buf(new real[geo.rows() * geo.cols()]);
    im2col(input.values().data(), geo, buf.get());
    cols = std::move(buf);
  }

  Tensor out({geo.c_out, geo.ho, geo.wo});
  MapR(out.mutable_values().data(), geo.c_out, geo.cols()).noalias() =
      CMapR(weight.values().data(), geo.c_out, geo.rows()) * CMapR(cols.get(), geo.rows(), geo.cols());

  auto w_store = weight.storage();
  return g.record("conv2d", std::move(out), {input, weight},
                  [geo, cols, w_store](std::span<const real> gout, std::span<real* const> gin) {
                    CMapR go(gout.data(), geo.c_out, geo.cols());
                    if (gin[1]) {
                      MapR(gin[1], geo.c_out, geo.rows()).noalias() +=
                          go * CMapR(cols.get(), geo.rows(), geo.cols()).transpose();
                    }
                    if (gin[0]) {
                      CMapR wm(w_store->data.data(), geo.c_out, geo.rows());
                      if (geo.pointwise()) {
                        MapR(gin[0], geo.rows(), geo.cols()).noalias() += wm.transpose() * go;
                      } else {
                        MatR dcols = wm.transpose() * go;
                        col2im_add(dcols.data(), geo, gin[0]);
                      }
                    }
                  });
}

// ---- unary -----------------------------------------------------------------

namespace {

// Records an elementwise op whose derivative is a function of (x, y).
template <class Fwd, class Deriv>
Tensor unary(Graph& g, std::string_view kind, const Tensor& x, Fwd fwd, Deriv deriv) {
  if (!x.defined()) throw ContractError(std::string(kind) + ": undefined tensor");
  Tensor out(x.shape());
  auto xv = x.values();
  auto yv = out.mutable_values();
  for (std::size_t i = 0; i < xv.size(); ++i) yv[i] = fwd(xv[i]);
  auto xs = x.storage();
  auto ys = out.storage();
  return g.record(kind, std::move(out), {x}, [xs, ys, deriv](std::span<const real> gout, std::span<real* const> gin) {
    if (!gin[0]) return;
    const auto& xd = xs->data;
    const auto& yd = ys->data;
    for (std::size_t i = 0; i < gout.size(); ++i) gin[0][i] += gout[i] * deriv(xd[i], yd[i]);
  });
}

}  // namespace

Tensor relu(Graph& g, const Tensor& x) {
  return unary(
      g, "relu", x, [](real v) { return v > real(0) ? v : real(0); },
      [](real v, real) { return v > real(0) ? real(1) : real(0); });
}

Tensor sigmoid(Graph& g, const Tensor& x) {
  return unary(
      g, "sigmoid", x,
      [](real v) {
        if (v >= real(0)) return real(1) / (real(1) + std::exp(-v));
        const real e = std::exp(v);
        return e / (real(1) + e);
      },
      [](real, real y) { return y * (real(1) - y); });
}

Tensor softplus(Graph& g, const Tensor& x) {
  return unary(
      g, "softplus", x, [](real v) { return std::max(v, real(0)) + std::log1p(std::exp(-std::abs(v))); },
      [](real v, real) {
        if (v >= real(0)) return real(1) / (real(1) + std::exp(-v));
        const real e = std::exp(v);
        return e / (real(1) + e);
      });
}

Tensor scale(Graph& g, const Tensor& x, real factor) {
  return unary(
      g, "scale", x, [factor](real v) { return v * factor; }, [factor](real, real) { return factor; });
}

Tensor add_scalar(Graph& g, const Tensor& x, real offset) {
  return unary(
      g, "add_scalar", x, [offset](real v) { return v + offset; }, [](real, real) { return real(1); });
}

Tensor clamp_min(Graph& g, const Tensor& x, real floor, std::size_t* clamped) {
  if (clamped) {
    auto xv = x.values();
    *clamped = static_cast<std::size_t>(std::count_if(xv.begin(), xv.end(), [floor](real v) { return v < floor; }));
  }
  return unary(
      g, "clamp_min", x, [floor](real v) { return v < floor ? floor : v; },
      [floor](real v, real) { return v < floor ? real(0) : real(1); });
}

// ---- broadcasting binary ---------------------------------------------------

Shape broadcast_shape(const Shape& a, const Shape& b) {
  if (a.size() != b.size()) {
    throw DimensionError("broadcast needs equal ranks: " + shape_string(a) + " vs " + shape_string(b));
  }
  Shape out(a.size());
  for (std::size_t d = 0; d < a.size(); ++d) {
    if (a[d] == b[d] || b[d] == 1) {
      out[d] = a[d];
    } else if (a[d] == 1) {
      out[d] = b[d];
    } else {
      throw DimensionError("shapes " + shape_string(a) + " and " + shape_string(b) + " do not broadcast");
    }
  }
  return out;
}

namespace {

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a, stride_b;
  bool same = false;

  BroadcastPlan(const Shape& a, const Shape& b) : out(broadcast_shape(a, b)), same(a == b) {
    const std::size_t r = out.size();
    stride_a.assign(r, 0);
    stride_b.assign(r, 0);
    std::size_t sa = 1, sb = 1;
    for (std::size_t d = r; d-- > 0;) {
      stride_a[d] = a[d] == 1 ? 0 : sa;
      stride_b[d] = b[d] == 1 ? 0 : sb;
      sa *= a[d];
      sb *= b[d];
    }
  }

  // f(out_index, a_index, b_index) over the output in row-major order.
  template <class F>
  void for_each(F&& f) const {
    const std::size_t n = shape_numel(out);
    if (same) {
      for (std::size_t i = 0; i < n; ++i) f(i, i, i);
      return;
    }
    const std::size_t r = out.size();
    std::vector<std::size_t> idx(r, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t o = 0; o < n; ++o) {
      f(o, ia, ib);
      for (std::size_t d = r; d-- > 0;) {
        ia += stride_a[d];
        ib += stride_b[d];
        if (++idx[d] < out[d]) break;
        ia -= stride_a[d] * out[d];
        ib -= stride_b[d] * out[d];
        idx[d] = 0;
      }
    }
  }
};

enum class BinOp { Add, Sub, Mul, Div };

Tensor binary(Graph& g, std::string_view kind, BinOp op, const Tensor& a, const Tensor& b) {
  if (!a.defined() || !b.defined()) throw ContractError(std::string(kind) + ": undefined tensor");
  auto plan = std::make_shared<BroadcastPlan>(a.shape(), b.shape());
  Tensor out(plan->out);
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.mutable_values();
  plan->for_each([&](std::size_t o, std::size_t ia, std::size_t ib) {
    switch (op) {
      case BinOp::Add: ov[o] = av[ia] + bv[ib]; break;
      case BinOp::Sub: ov[o] = av[ia] - bv[ib]; break;
      case BinOp::Mul: ov[o] = av[ia] * bv[ib]; break;
      case BinOp::Div: ov[o] = av[ia] / bv[ib]; break;
    }
  });
  auto as = a.storage();
  auto bs = b.storage();
  return g.record(kind, std::move(out), {a, b},
                  [plan, op, as, bs](std::span<const real> gout, std::span<real* const> gin) {
                    real* ga = gin[0];
                    real* gb = gin[1];
                    const auto& ad = as->data;
                    const auto& bd = bs->data;
                    plan->for_each([&](std::size_t o, std::size_t ia, std::size_t ib) {
                      const real go = gout[o];
                      switch (op) {
                        case BinOp::Add:
                          if (ga) ga[ia] += go;
                          if (gb) gb[ib] += go;
                          break;
                        case BinOp::Sub:
                          if (ga) ga[ia] += go;
                          if (gb) gb[ib] -= go;
                          break;
                        case BinOp::Mul:
                          if (ga) ga[ia] += go * bd[ib];
                          if (gb) gb[ib] += go * ad[ia];
                          break;
                        case BinOp::Div:
                          if (ga) ga[ia] += go / bd[ib];
                          if (gb) gb[ib] -= go * ad[ia] / (bd[ib] * bd[ib]);
                          break;
                      }
                    });
                  });
}

}  // namespace

Tensor add(Graph& g, const Tensor& a, const Tensor& b) { return binary(g, "add", BinOp::Add, a, b); }
Tensor sub(Graph& g, const Tensor& a, const Tensor& b) { return binary(g, "sub", BinOp::Sub, a, b); }
Tensor mul(Graph& g, const Tensor& a, const Tensor& b) { return binary(g, "mul", BinOp::Mul, a, b); }
Tensor div(Graph& g, const Tensor& a, const Tensor& b) { return binary(g, "div", BinOp::Div, a, b); }

// ---- spatial ---------------------------------------------------------------

Tensor maxpool2(Graph& g, const Tensor& x) {
  require_rank(x, 3, "maxpool2");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % 2 != 0 || w % 2 != 0) throw DimensionError("maxpool2 needs even spatial dims, got " + shape_string(x.shape()));
  const std::size_t ho = h / 2, wo = w / 2;
  Tensor out({c, ho, wo});
  auto argmax = std::make_shared<std::vector<std::size_t>>(c * ho * wo);
  auto xv = x.values();
  auto ov = out.mutable_values();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        std::size_t best = (ch * h + 2 * i) * w + 2 * j;
        for (std::size_t di = 0; di < 2; ++di) {
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = (ch * h + 2 * i + di) * w + 2 * j + dj;
            if (xv[idx] > xv[best]) best = idx;
          }
        }
        const std::size_t o = (ch * ho + i) * wo + j;
        ov[o] = xv[best];
        (*argmax)[o] = best;
      }
    }
  }
  return g.record("maxpool2", std::move(out), {x}, [argmax](std::span<const real> gout, std::span<real* const> gin) {
    if (!gin[0]) return;
    for (std::size_t o = 0; o < gout.size(); ++o) gin[0][(*argmax)[o]] += gout[o];
  });
}

Tensor upsample_nearest2(Graph& g, const Tensor& x) {
  require_rank(x, 3, "upsample_nearest2");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t ho = 2 * h, wo = 2 * w;
  Tensor out({c, ho, wo});
  auto xv = x.values();
  auto ov = out.mutable_values();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) ov[(ch * ho + i) * wo + j] = xv[(ch * h + i / 2) * w + j / 2];
    }
  }
  return g.record("upsample_nearest2", std::move(out), {x},
                  [c, h, w](std::span<const real> gout, std::span<real* const> gin) {
                    if (!gin[0]) return;
                    const std::size_t ho = 2 * h, wo = 2 * w;
                    for (std::size_t ch = 0; ch < c; ++ch) {
                      for (std::size_t i = 0; i < ho; ++i) {
                        for (std::size_t j = 0; j < wo; ++j) {
                          gin[0][(ch * h + i / 2) * w + j / 2] += gout[(ch * ho + i) * wo + j];
                        }
                      }
                    }
                  });
}

Tensor concat_channels(Graph& g, const Tensor& a, const Tensor& b) {
  if (!a.defined() || !b.defined()) throw ContractError("concat_channels: undefined tensor");
  if (a.rank() != b.rank() || !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1)) {
    throw DimensionError("concat_channels: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Shape shape = a.shape();
  shape[0] += b.dim(0);
  std::vector<real> values;
  values.reserve(shape_numel(shape));
  values.insert(values.end(), a.values().begin(), a.values().end());
  values.insert(values.end(), b.values().begin(), b.values().end());
  const std::size_t na = a.numel();
  return g.record("concat_channels", Tensor(std::move(shape), std::move(values)), {a, b},
                  [na](std::span<const real> gout, std::span<real* const> gin) {
                    if (gin[0]) {
                      for (std::size_t i = 0; i < na; ++i) gin[0][i] += gout[i];
                    }
                    if (gin[1]) {
                      for (std::size_t i = na; i < gout.size(); ++i) gin[1][i - na] += gout[i];
                    }
                  });
}

Tensor slice_channels(Graph& g, const Tensor& x, std::size_t begin, std::size_t end) {
  if (!x.defined()) throw ContractError("slice_channels: undefined tensor");
  if (begin >= end || end > x.dim(0)) {
    throw DimensionError("slice_channels: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for " + shape_string(x.shape()));
  }
  const std::size_t inner = x.numel() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = end - begin;
  auto xv = x.values();
  std::vector<real> values(xv.begin() + static_cast<long>(begin * inner), xv.begin() + static_cast<long>(end * inner));
  const std::size_t offset = begin * inner;
  return g.record("slice_channels", Tensor(std::move(shape), std::move(values)), {x},
                  [offset](std::span<const real> gout, std::span<real* const> gin) {
                    if (!gin[0]) return;
                    for (std::size_t i = 0; i < gout.size(); ++i) gin[0][offset + i] += gout[i];
                  });
}

Tensor transpose2d(Graph& g, const Tensor& x) {
  require_rank(x, 2, "transpose2d");
  const std::size_t r = x.dim(0), c = x.dim(1);
  Tensor out({c, r});
  auto xv = x.values();
  auto ov = out.mutable_values();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) ov[j * r + i] = xv[i * c + j];
  }
  return g.record("transpose2d", std::move(out), {x}, [r, c](std::span<const real> gout, std::span<real* const> gin) {
    if (!gin[0]) return;
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) gin[0][i * c + j] += gout[j * r + i];
    }
  });
}

// ---- reductions ------------------------------------------------------------

Tensor sum(Graph& g, const Tensor& x) {
  if (!x.defined()) throw ContractError("sum: undefined tensor");
  double acc = 0.0;
  for (real v : x.values()) acc += v;
  const std::size_t n = x.numel();
  return g.record("sum", Tensor::scalar(static_cast<real>(acc)), {x},
                  [n](std::span<const real> gout, std::span<real* const> gin) {
                    if (!gin[0]) return;
                    for (std::size_t i = 0; i < n; ++i) gin[0][i] += gout[0];
                  });
}

Tensor mean(Graph& g, const Tensor& x) {
  if (!x.defined()) throw ContractError("mean: undefined tensor");
  double acc = 0.0;
  for (real v : x.values()) acc += v;
  const std::size_t n = x.numel();
  return g.record("mean", Tensor::scalar(static_cast<real>(acc / static_cast<double>(n))), {x},
                  [n](std::span<const real> gout, std::span<real* const> gin) {
                    if (!gin[0]) return;
                    const real share = gout[0] / static_cast<real>(n);
                    for (std::size_t i = 0; i < n; ++i) gin[0][i] += share;
                  });
}

Tensor sum_axis(Graph& g, const Tensor& x, std::size_t axis) {
  if (!x.defined()) throw ContractError("sum_axis: undefined tensor");
  if (axis >= x.rank()) throw DimensionError("sum_axis: axis out of range for " + shape_string(x.shape()));
  const auto& s = x.shape();
  const std::size_t outer = shape_numel(Shape(s.begin(), s.begin() + static_cast<long>(axis)));
  const std::size_t len = s[axis];
  const std::size_t inner = shape_numel(Shape(s.begin() + static_cast<long>(axis) + 1, s.end()));
  Shape shape;
  for (std::size_t d = 0; d < s.size(); ++d) {
    if (d != axis) shape.push_back(s[d]);
  }
  if (shape.empty()) shape.push_back(1);
  Tensor out(std::move(shape));
  auto xv = x.values();
  auto ov = out.mutable_values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < len; ++k) {
      const real* src = xv.data() + (o * len + k) * inner;
      real* dst = ov.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  return g.record("sum_axis", std::move(out), {x},
                  [outer, len, inner](std::span<const real> gout, std::span<real* const> gin) {
                    if (!gin[0]) return;
                    for (std::size_t o = 0; o < outer; ++o) {
                      for (std::size_t k = 0; k < len; ++k) {
                        real* dst = gin[0] + (o * len + k) * inner;
                        const real* src = gout.data() + o * inner;
                        for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
                      }
                    }
                  });
}

}  // namespace SCP_PRECISION_NS
}  // namespace scp
