#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <vector>

#include "hass/tensor.hpp"

namespace hass {

// Handle to a value recorded on a Tape.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const { return id != npos; }
};

// Recorded-operation tape. Every operation appends a node holding the forward
// value and an analytic backward rule; backward() replays the rules in
// reverse recording order, which is a valid topological order because an
// operation can only consume earlier vars.
//
// Gradient accumulators are zeroed at the start of every backward pass.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf value (input or parameter).
  Var leaf(Tensor value);

  const Tensor& value(Var v) const;
  // Gradient of the last backward() target with respect to v.
  const Tensor& grad(Var v) const;

  // Matrix product a[p x q] * b[q x r] -> [p x r].
  Var matmul(Var a, Var b);
  // Elementwise sum of two same-shape tensors.
  Var add(Var a, Var b);
  // Elementwise product of two same-shape tensors.
  Var mul(Var a, Var b);
  // x[d x n] plus bias b[d] broadcast across columns (rank-1 update b 1^T).
  Var add_bias_broadcast(Var x, Var b);
  // Row-wise softmax of a 2-D tensor, computed max-shifted.
  Var softmax_rows(Var x);
  // Elementwise max(x, 0); the subgradient at exactly 0 is 0.
  Var relu(Var x);
  // Normalizes each token vector to zero mean / unit population variance,
  // then applies the affine (gain, bias). A 1-D x is one token; a 2-D x is
  // one token per column, normalized over the row axis.
  Var layer_norm(Var x, Var gain, Var bias, double eps);
  // 2-D transpose.
  Var transpose(Var x);
  // Swap axes 1 and 2 of a rank-3 tensor: [a x b x c] -> [a x c x b].
  Var swap_axes_12(Var x);
  // Same data, new shape (element count preserved).
  Var reshape(Var x, std::vector<std::size_t> shape);
  Var scale(Var x, double s);
  // Stack 2-D blocks with equal column counts on top of each other.
  Var vstack(const std::vector<Var>& parts);
  // Sum of all elements -> scalar (shape {1}).
  Var sum(Var x);
  // Row means of a 2-D tensor: [r x c] -> [r].
  Var mean_cols(Var x);
  // Valid 1-D convolution over the time axis: x[c x t], w[f x c x k], b[f]
  // -> [f x (t-k+1)].
  Var conv1d_time(Var x, Var w, Var b);
  // Mean over rows of -log softmax(row)[label], computed with a stable
  // log-sum-exp. logits is [b x k]; labels holds b entries in [0, k).
  Var cross_entropy_rows(Var logits, std::vector<std::size_t> labels);

  // Reverse pass from a scalar output. Throws if `output` was not recorded
  // on this tape or is not scalar-shaped.
  void backward(Var output);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    std::function<void(Tape&, std::size_t)> backward;
  };

  Var push(Tensor value, std::vector<std::size_t> parents,
           std::function<void(Tape&, std::size_t)> backward_fn);
  const Node& node(Var v) const;
  void check_var(Var v, const char* op) const;

  // deque: references returned by value()/grad() stay valid while the
  // graph keeps growing
  std::deque<Node> nodes_;
  bool grads_ready_ = false;
};

}  // namespace hass
