#pragma once

// Tape-based reverse-mode automatic differentiation over dense tensors.
//
// Backward rules are written with the same differentiable operations as the
// forward pass. In create-graph mode the gradient computation is itself
// recorded, so a function of first-order gradients can be differentiated
// again. In value mode the backward pass runs with recording disabled and
// its scratch nodes are dropped afterwards.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "uatmc/tensor.hpp"

namespace uatmc::ad {

class Tape;

// Handle to a node on a tape. Cheap to copy; only valid while the tape lives
// and the node has not been truncated away.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Receives the node's own handle and the upstream gradient, returns one
// gradient per input (an invalid Var means "no contribution").
using BackwardFn = std::function<std::vector<Var>(const Var& self, const Var& upstream)>;

struct Node {
  const char* op = "leaf";
  Tensor value;
  std::vector<std::size_t> inputs;
  BackwardFn backward;
  bool requires_grad = false;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Differentiable input.
  Var leaf(Tensor value);
  // Input that never receives a gradient.
  Var constant(Tensor value);

  // Records an operation. When recording is off, or no input requires a
  // gradient, the result is stored as a constant.
  Var record(const char* op, Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

  // Exact gradients of a scalar `loss` with respect to `wrt`. Leaves the
  // loss is disconnected from get zero tensors.
  std::vector<Tensor> grad(const Var& loss, std::span<const Var> wrt);

  // Same, but the gradient computation is recorded so the returned Vars can
  // be differentiated again.
  std::vector<Var> grad_graph(const Var& loss, std::span<const Var> wrt);

  // Vector-Jacobian product seed^T dOutput/dWrt for a non-scalar output.
  std::vector<Tensor> vjp(const Var& output, const Tensor& seed, std::span<const Var> wrt);

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  bool recording() const { return recording_; }

  // Drops every node with id >= mark.
  void truncate(std::size_t mark);

 private:
  std::vector<Var> backprop(const Var& output, const Var& seed, std::span<const Var> wrt);

  std::deque<Node> nodes_;
  bool recording_ = true;
};

// ---- element-wise ------------------------------------------------------
// Binary operations accept equal shapes or a single-element operand.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);

Var exp(const Var& a);
Var log(const Var& a);  // DomainError on non-positive input
Var sqrt(const Var& a);  // DomainError on negative input
Var square(const Var& a);
Var sigmoid(const Var& a);
Var log_sigmoid(const Var& a);  // ln(sigmoid(a)), overflow-free
Var tanh(const Var& a);

// ---- reductions and shape -------------------------------------------------
Var sum(const Var& a);
Var mean(const Var& a);
Var reshape(const Var& a, Shape shape);
Var dot(const Var& a, const Var& b);  // flattened inner product -> scalar

// op(A) * op(B) for matrices; a rank-1 right operand gives a mat-vec product.
Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);
Var matvec(const Var& w, const Var& x);

// Row r of the result is row idx[r] of `table`.
Var gather_rows(const Var& table, std::vector<std::size_t> idx);
// Inverse of gather: result[idx[r]] += src[r], result has `rows` rows.
Var scatter_add_rows(const Var& src, std::vector<std::size_t> idx, std::size_t rows);
// Per-row inner products of two equally shaped matrices -> vector.
Var row_dot(const Var& a, const Var& b);
// Multiplies row r of `x` by s[r].
Var scale_rows(const Var& x, const Var& s);
// Column-wise concatenation (vectors concatenate end to end).
Var concat(const std::vector<Var>& parts);
Var slice_cols(const Var& x, std::size_t begin, std::size_t width);
Var pad_cols(const Var& x, std::size_t begin, std::size_t total);

// ---- composite -------------------------------------------------------------
inline constexpr double kNormTolerance = 1e-12;

struct CosineResult {
  Var value;
  bool degenerate = false;
};

// a.b / (|a| |b|) over flattened tensors of equal size. When either norm is
// below kNormTolerance the result is a constant zero and `degenerate` is set.
CosineResult cosine(const Var& a, const Var& b);

// Value mode convenience for a scalar loss.
inline std::vector<Tensor> grad(const Var& loss, std::span<const Var> wrt) {
  return loss.tape().grad(loss, wrt);
}

// Second-order helper: takes create-graph gradients of `inner` w.r.t. `wrt`,
// passes them to `outer` and returns d outer / d wrt. ContractError if the
// outer loss is not connected to the recorded first-order gradients.
std::vector<Tensor> grad_of_grad(const Var& inner, std::span<const Var> wrt,
                                 const std::function<Var(const std::vector<Var>&)>& outer);

}  // namespace uatmc::ad
