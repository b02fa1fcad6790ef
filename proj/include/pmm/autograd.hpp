#pragma once

#include <functional>
#include <memory>
#include <random>
#include <vector>

#include "pmm/tensor.hpp"

namespace pmm::ag {

// Reverse-mode autodiff over Tensor. Each op returns a fresh node holding the
// result and a closure that scatters the incoming gradient to its parents.
// Node creation order is a topological order, so backward() just walks the
// reachable set by descending id. Single-threaded; gradient accumulation order
// is therefore deterministic.

struct Node;
using Value = std::shared_ptr<Node>;

struct Node {
  Tensor val;
  Tensor grad;  // allocated lazily, same shape as val
  bool requires_grad = false;
  std::vector<Value> parents;
  std::function<void(Node&)> backward_fn;
  long long id = 0;

  Tensor& ensure_grad() {
    if (grad.size() == 0) grad = Tensor(val.rows, val.cols);
    return grad;
  }
};

Value make_node(Tensor val, bool requires_grad, std::vector<Value> parents,
                std::function<void(Node&)> backward_fn);

/// Leaf with no gradient (inputs, frozen targets).
Value constant(Tensor t);
/// Leaf that accumulates gradient (model parameters).
Value parameter(Tensor t);

/// Backpropagate from a scalar root. Leaves keep their accumulated grads.
void backward(const Value& root);
void zero_grad(const Value& leaf);

// --- ops -------------------------------------------------------------------

Value matmul(const Value& a, const Value& b);
Value transpose(const Value& a);
Value reshape(const Value& a, int rows, int cols);

Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);  // elementwise
Value scale(const Value& a, double s);
/// (n x m) + (1 x m), bias broadcast over rows.
Value add_rowvec(const Value& a, const Value& bias);
/// (n x m) scaled per-row by (n x 1).
Value mul_colvec(const Value& a, const Value& s);
/// matmul(a, w) + bias row-broadcast.
Value affine(const Value& a, const Value& w, const Value& bias);

Value sigmoid(const Value& a);
Value tanh_(const Value& a);
Value relu(const Value& a);
Value leaky_relu(const Value& a, double slope);
/// PReLU with a single learnable slope (1x1 parameter).
Value prelu(const Value& a, const Value& slope);
Value log_(const Value& a);
Value square(const Value& a);
/// Clamp; gradient is passed through only inside [lo, hi].
Value clamp(const Value& a, double lo, double hi);

/// Softmax independently over each row.
Value softmax_rows(const Value& a);
/// LayerNorm over each row with learnable gain/bias (1 x m each).
Value layer_norm_rows(const Value& a, const Value& gain, const Value& bias, double eps = 1e-5);

Value concat_rows(const std::vector<Value>& parts);
Value concat_cols(const std::vector<Value>& parts);
Value slice_rows(const Value& a, int r0, int r1);
Value slice_cols(const Value& a, int c0, int c1);

Value sum_all(const Value& a);
Value mean_all(const Value& a);

/// Inverted dropout; identity when p == 0. Mask drawn from rng.
Value dropout(const Value& a, double p, std::mt19937_64& rng);

}  // namespace pmm::ag
