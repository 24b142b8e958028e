#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "dpadaln/named_tensors.hpp"
#include "dpadaln/tensor.hpp"

// Reverse-mode automatic differentiation over dense f64 tensors.
//
// A Tape records primitive operations in evaluation order, so every node's
// inputs precede it and the recording is acyclic by construction. A fresh
// tape is built per example; the per-example gradient is read back from the
// parameter leaves after backward().

namespace dpadaln::ad {

class Tape;

/// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
};

class Tape {
 public:
  /// Recomputes the value of node `self` from its parents' current values.
  using Forward = std::function<void(Tape&, std::size_t self)>;
  using Backprop = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Leaf that receives a gradient (used for Jacobians w.r.t. inputs).
  Var input(Tensor value);
  /// Trainable leaf; each identifier may appear once per tape.
  Var parameter(const std::string& id, Tensor value);
  /// Registers every entry of `params` and returns the handles in order.
  std::vector<Var> parameters(const ParamSet& params);
  Var parameter_var(std::string_view id) const;
  const std::vector<std::pair<std::string, std::size_t>>& parameter_nodes() const { return params_; }

  /// Records an interior node and evaluates it once. `parents` decide whether
  /// it needs a gradient.
  Var record(std::string_view op, std::initializer_list<Var> parents, Forward forward, Backprop backprop);
  Var record(std::string_view op, const std::vector<Var>& parents, Forward forward, Backprop backprop);

  /// Backpropagates from a scalar loss node.
  void backward(Var loss);
  /// Backpropagates an arbitrary seed (vector-Jacobian product) from `out`.
  void backward(Var out, const Tensor& seed);
  void zero_grad();

  GradientVector parameter_gradients() const;

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const std::string& op_name(std::size_t id) const { return nodes_[id].op; }
  std::size_t size() const { return nodes_.size(); }

  /// Output buffer of node `self`, resized only when the shape changes.
  Tensor& output(std::size_t self, std::vector<std::size_t> shape);

  /// Adds `g` into the gradient buffer of node `id` when it tracks gradients.
  /// Returns the buffer (or nullptr when the node is gradient-free).
  Tensor* grad_buffer(std::size_t id);

  // Replay: leaves may be overwritten and their descendants re-evaluated in
  // recording order. Gradients are not updated by a replay.
  Tensor& leaf_value(std::size_t id);
  /// Nodes that depend on `id` (excluding `id`), in recording order.
  std::vector<std::size_t> descendants(std::size_t id) const;
  void recompute(const std::vector<std::size_t>& ids);

 private:
  struct Node {
    std::string op;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::size_t> parents;
    Forward forward;
    Backprop backprop;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, std::size_t>> params_;
};

// ---- primitives -----------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise (Hadamard) product.
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var matmul(Var a, Var b);
Var transpose(Var a);
/// a (m x n) plus the length-n row vector r broadcast over rows.
Var add_row(Var a, Var r);
/// a (m x n) times the length-n row vector r broadcast over rows.
Var mul_row(Var a, Var r);
Var tanh(Var a);
/// Hard clamp to [-bound, bound]; zero gradient where saturated.
Var clamp(Var a, double bound);
/// Forward identical to clamp, backward passes the upstream gradient unchanged.
Var clamp_ste(Var a, double bound);
/// Elementwise map with a user supplied derivative.
Var map(Var a, std::string_view name, const std::function<double(double)>& f,
        const std::function<double(double)>& df);
/// Row-wise LayerNorm without affine parameters, stabilizer inside the sqrt.
Var layer_norm(Var a, double eps = 1e-5);
/// Row-wise softmax.
Var softmax(Var a);
/// Scaled dot-product self-attention over `heads` equal column groups of
/// q, k, v (each L x d); heads are concatenated in the output.
Var multi_head_attention(Var q, Var k, Var v, std::size_t heads);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var concat_cols(const std::vector<Var>& parts);
Var sum(Var a);
Var sum_squares(Var a);
/// Mean squared error over all entries.
Var mse(Var pred, Var target);
/// Mean squared error over rows whose `row_weight` entry is non-zero.
Var masked_mse(Var pred, Var target, const std::vector<double>& row_weight);
/// Euclidean projection onto the ball of radius max_norm.
Var project_l2(Var a, double max_norm);

}  // namespace dpadaln::ad
