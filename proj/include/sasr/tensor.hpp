#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sasr/errors.hpp"
#include "sasr/rng.hpp"

namespace sasr {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorData {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  // Lazily allocated gradient accumulator; same length as data once present.
  std::vector<double> grad;
};

// Value-semantics handle over shared dense storage. A rank-0 shape holds one
// scalar element.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  int64_t numel() const { return static_cast<int64_t>(d_->data.size()); }
  bool is_scalar() const { return numel() == 1; }
  // Value of a one-element tensor; contract error otherwise.
  double item() const;

  std::vector<double>& values() { return d_->data; }
  const std::vector<double>& values() const { return d_->data; }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool b) { d_->requires_grad = b; }

  bool has_grad() const { return !d_->grad.empty(); }
  // Gradient buffer, allocated zero-filled on first access. Storage is
  // shared between handle copies, so a const handle may still accumulate.
  std::vector<double>& grad() const;
  const std::vector<double>& grad_view() const;
  void zero_grad() { d_->grad.clear(); }

  // Same values, no gradient tracking, independent storage.
  Tensor detached_copy() const;

  std::shared_ptr<TensorData> impl() const { return d_; }

 private:
  explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
  std::shared_ptr<TensorData> d_;
};

enum class Op {
  Add,
  Sub,
  Mul,
  Matmul,
  Broadcast,
  Sum,
  Mean,
  Exp,
  Log,
  Softmax,
  LogSoftmax,
  Gather,
  LayerNorm,
  Gelu,
  Scale,
  Concat,
  MaskFill,
};

const char* op_name(Op op);

// Reverse-mode tape. Every primitive computes eagerly and, while recording is
// on and some input tracks gradients, pushes one node holding the exact
// vector-Jacobian rule for that application. Nodes are naturally in
// topological order because they are appended at execution time. A tape is
// owned by a single training run and is not thread-safe; independent runs own
// independent tapes.
class Tape {
 public:
  // Elementwise; equal shapes, or one operand's shape a trailing suffix of
  // the other's (the smaller side is routed through broadcast).
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);

  // 2-D matrix product with optional transposes (the stored operand is
  // transposed on the fly).
  Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false,
                bool trans_b = false);

  // Replicate x along new leading dimensions; x's shape must be a trailing
  // suffix of target.
  Tensor broadcast(const Tensor& x, const Shape& target);

  Tensor sum(const Tensor& x);   // full reduction to rank-0
  Tensor mean(const Tensor& x);  // full reduction to rank-0

  Tensor exp(const Tensor& x);
  Tensor log(const Tensor& x);
  Tensor softmax(const Tensor& x);      // last axis, max-subtracted
  Tensor log_softmax(const Tensor& x);  // last axis, max-subtracted

  // x is [rows, cols]; index has one entry per row; out[r] = x[r, index[r]].
  Tensor gather(const Tensor& x, const std::vector<int>& index);

  // Normalize over the last axis with learned gain and bias (both [d]).
  Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                    double eps = 1e-5);

  Tensor gelu(const Tensor& x);  // tanh approximation
  Tensor scale(const Tensor& x, double c);

  // Concatenate along the last axis; all other dimensions must match.
  Tensor concat(const std::vector<Tensor>& parts);

  // out[i] = mask[i] ? value : x[i]; gradients do not flow into filled slots.
  Tensor mask_fill(const Tensor& x, const std::vector<uint8_t>& mask,
                   double value);

  // Seed d(loss)/d(loss) = 1 and run all recorded rules in reverse order,
  // accumulating into the grad buffer of every tracked tensor reachable from
  // the loss. Gradients accumulate across calls until zero_grad; the tape is
  // cleared afterwards.
  void backward(const Tensor& loss);

  size_t node_count() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  bool recording() const { return recording_; }
  void set_recording(bool r) { recording_ = r; }

 private:
  struct Node {
    Op op;
    std::function<void()> vjp;
  };
  std::vector<Node> nodes_;
  bool recording_ = true;

  // Marks the output, checks finiteness, and records the rule if needed.
  void finish(Op op, Tensor& out, bool track, std::function<void()> vjp);
  friend class NoGradGuard;
};

// RAII guard that suspends recording on a tape.
class NoGradGuard {
 public:
  explicit NoGradGuard(Tape& tape) : tape_(tape), prev_(tape.recording_) {
    tape_.recording_ = false;
  }
  ~NoGradGuard() { tape_.recording_ = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape& tape_;
  bool prev_;
};

// L2 norm over the concatenated gradients of all parameters. Per-tensor
// partial sums are combined in value order, so the result does not depend on
// the order of the parameter list.
double global_grad_norm(const std::vector<Tensor>& params);

void zero_grads(std::vector<Tensor>& params);

// Compares the analytic gradient of f against central finite differences on
// up to samples_per_param coordinates of each parameter, preferring the
// steepest coordinates: where the gradient is comparable to the evaluation
// round-off of f the quotient measures noise, not correctness. f must
// rebuild the loss on `tape` from the current parameter values and must be
// deterministic. Returns the max relative error; clobbers gradient buffers.
double finite_difference_check(Tape& tape, const std::function<Tensor()>& f,
                               const std::vector<Tensor>& params, double h,
                               int samples_per_param);

}  // namespace sasr
