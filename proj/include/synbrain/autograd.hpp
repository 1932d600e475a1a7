#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "synbrain/kernels.hpp"
#include "synbrain/tensor.hpp"

namespace synbrain {

class Graph;
class ParamTree;

/// Handle to a value recorded on a Graph.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  const Tensor& value() const;
  const Tensor& grad() const;
  bool requires_grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Graph* graph() const { return graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Tape of operations for one forward pass; `backward` replays it in reverse.
///
/// Nodes are appended in evaluation order, so reverse insertion order is a
/// valid topological order. A graph built with `grad_enabled = false`
/// records values only.
class Graph {
 public:
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  /// Leaf whose gradient is kept on the node (used for input gradients).
  Var input(Tensor value, bool requires_grad = true);
  /// Parameter leaf; one node per leaf per graph, gradient flushed into the
  /// tree during backward. Frozen leaves do not request gradients.
  Var param(ParamTree& tree, std::size_t leaf);

  using Backward = std::function<void(const Tensor& out_grad)>;
  Var record(Tensor value, std::span<const Var> parents, Backward backward);

  void backward(Var loss);

  bool grad_enabled() const { return grad_enabled_; }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Accumulation target for a parent's gradient, zero-allocated on first use.
  Tensor& grad_slot(std::size_t id);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
  };

  bool grad_enabled_;
  std::deque<Node> nodes_;
  std::unordered_map<const void*, std::unordered_map<std::size_t, std::size_t>> param_nodes_;
};

// ---------------------------------------------------------------------------
// Differentiable ops. All operate on 2-D values.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
Var transpose(Var a);
/// x + b with b a 1 x cols row broadcast over rows.
Var add_row_bias(Var x, Var b);
/// x + b with b a rows x 1 column broadcast over columns.
Var add_col_bias(Var x, Var b);

/// Normalizes each row over its columns, then applies 1 x cols gain and bias.
Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5);

Var gelu(Var x);
Var silu(Var x);
Var exp(Var x);
Var square(Var x);
Var clamp(Var x, double lo, double hi);

Var softmax_rows(Var x);
Var log_softmax_rows(Var x);

Var sum(Var x);
Var mean(Var x);
/// Mean over rows: (r x c) -> (1 x c).
Var mean_rows(Var x);
Var l2_normalize_rows(Var x, double eps = 1e-12);

Var slice_cols(Var x, std::size_t begin, std::size_t end);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);

/// Cross-correlation over the column axis; x is c_in x length, w is
/// c_out x (c_in*kernel), b is c_out x 1 (may be invalid for no bias).
Var conv1d(Var x, Var w, Var b, std::size_t kernel, std::size_t stride, std::size_t pad);

/// Per-row max over bins [floor(i*L/out), ceil((i+1)*L/out)).
Var adaptive_max_pool(Var x, std::size_t out_len);
/// Per-row linear interpolation onto out_len points with endpoints aligned.
Var linear_resample(Var x, std::size_t out_len);
/// Per-row nearest-neighbour repetition by an integer factor.
Var upsample_nearest(Var x, std::size_t factor);

// Plain (non-recorded) forms of the shape-changing maps, shared with tests.
Tensor adaptive_max_pool_values(const Tensor& x, std::size_t out_len);
Tensor linear_resample_values(const Tensor& x, std::size_t out_len);

}  // namespace synbrain
