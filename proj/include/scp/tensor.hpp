#pragma once

// Dense tensor with tape-based reverse-mode differentiation.
//
// A Tensor is a shape plus a shared storage block. Copies and reshapes
// alias the same storage; clone() makes an independent copy. Parameters are
// leaves with requires_grad set; every other differentiable value is
// produced by an op recorded on a Graph.
//
// The scalar type is float. Building with SCP_REAL_DOUBLE switches it to
// double and moves every symbol into the scp::f64 namespace, so a 64-bit
// variant of the library can be linked next to the 32-bit one (used by
// the finite-difference gradient checker).

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "scp/errors.hpp"

#if defined(SCP_REAL_DOUBLE)
#define SCP_PRECISION_NS f64
#else
#define SCP_PRECISION_NS f32
#endif

namespace scp {
inline namespace SCP_PRECISION_NS {

#if defined(SCP_REAL_DOUBLE)
using real = double;
#else
using real = float;
#endif

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {
struct Storage {
  std::vector<real> data;
  std::vector<real> grad;
  bool requires_grad = false;
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, real fill = real(0));
  Tensor(Shape shape, std::vector<real> values);

  static Tensor scalar(real value) { return Tensor({1}, value); }

  bool defined() const noexcept { return storage_ != nullptr; }
  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const noexcept { return storage_ ? storage_->data.size() : 0; }

  std::span<const real> values() const;
  // Writable view. Never call on a tensor that a live Graph has recorded.
  std::span<real> mutable_values();
  real item() const;

  // Row-major element access, one index per dimension.
  template <class... Index>
  real at(Index... index) const {
    const std::size_t idx[] = {static_cast<std::size_t>(index)...};
    return values()[flat_index(std::span<const std::size_t>(idx, sizeof...(Index)))];
  }
  std::size_t flat_index(std::span<const std::size_t> index) const;

  bool requires_grad() const noexcept { return storage_ && storage_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool has_grad() const noexcept { return storage_ && !storage_->grad.empty(); }
  std::span<const real> grad() const;
  std::span<real> mutable_grad();
  void zero_grad();

  // New shape over the same storage (and the same gradient buffer).
  Tensor reshape(Shape shape) const;
  // Deep copy of the values; the copy is a fresh leaf without gradient.
  Tensor clone() const;

  const detail::Storage* storage_id() const noexcept { return storage_.get(); }
  const std::shared_ptr<detail::Storage>& storage() const noexcept { return storage_; }

 private:
  Shape shape_;
  std::shared_ptr<detail::Storage> storage_;
};

// Records the forward ops of one step so that gradients can be replayed
// backwards. One graph per step; not shared between threads.
class Graph {
 public:
  // grad_in[k] is null when input k does not need a gradient.
  using BackwardFn = std::function<void(std::span<const real> grad_out, std::span<real* const> grad_in)>;

  struct Node {
    std::string_view kind;
    std::shared_ptr<detail::Storage> output;
    std::vector<std::shared_ptr<detail::Storage>> inputs;
    std::vector<long> input_nodes;  // -1 for leaves
    BackwardFn backward;
  };

  explicit Graph(bool recording = true) : recording_(recording) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const noexcept { return recording_; }
  // True when gradients must flow into t: a requires_grad leaf, or the
  // output of a node recorded here.
  bool needs_grad(const Tensor& t) const;

  // Appends a node producing `out` if recording and any input needs a
  // gradient. Returns `out` either way.
  Tensor record(std::string_view kind, Tensor out, std::initializer_list<Tensor> inputs, BackwardFn fn);

  // Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable
  // from loss. Repeated calls accumulate.
  void backward(const Tensor& loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const std::vector<Tensor>& leaves() const noexcept { return leaves_; }

 private:
  bool recording_;
  std::vector<Node> nodes_;
  std::vector<Tensor> leaves_;
  std::unordered_map<const detail::Storage*, long> node_of_;
};

inline void backward(Graph& graph, const Tensor& loss) { graph.backward(loss); }

// ---- ops -----------------------------------------------------------------
// All ops are functional: inputs are never modified.

// Cross-correlation (no kernel flip) with zero padding.
// input [C_in,H,W], weight [C_out,C_in,k,k] -> [C_out,H',W'],
// H' = (H + 2*padding - k) / stride + 1.
Tensor conv2d(Graph& g, const Tensor& input, const Tensor& weight, int stride = 1, int padding = 0);

Tensor relu(Graph& g, const Tensor& x);
Tensor sigmoid(Graph& g, const Tensor& x);
// log(1 + exp(x)), evaluated without overflow.
Tensor softplus(Graph& g, const Tensor& x);
Tensor scale(Graph& g, const Tensor& x, real factor);
Tensor add_scalar(Graph& g, const Tensor& x, real offset);
// max(x, floor). When `clamped` is given it receives the number of entries
// that were raised to the floor.
Tensor clamp_min(Graph& g, const Tensor& x, real floor, std::size_t* clamped = nullptr);

// Elementwise with broadcasting: equal ranks, each dimension equal or 1.
// Division by an exact zero yields inf/nan as IEEE arithmetic dictates.
Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor sub(Graph& g, const Tensor& a, const Tensor& b);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
Tensor div(Graph& g, const Tensor& a, const Tensor& b);
Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor maxpool2(Graph& g, const Tensor& x);
Tensor upsample_nearest2(Graph& g, const Tensor& x);
Tensor concat_channels(Graph& g, const Tensor& a, const Tensor& b);
// Channels [begin, end) of x along axis 0.
Tensor slice_channels(Graph& g, const Tensor& x, std::size_t begin, std::size_t end);
Tensor transpose2d(Graph& g, const Tensor& x);

Tensor sum(Graph& g, const Tensor& x);
Tensor mean(Graph& g, const Tensor& x);
// Sums over `axis` and drops it.
Tensor sum_axis(Graph& g, const Tensor& x, std::size_t axis);

}  // namespace SCP_PRECISION_NS
}  // namespace scp
