#include "sasr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#ifdef SASR_USE_OPENBLAS
extern "C" {
typedef enum { CblasRowMajor = 101 } CBLAS_LAYOUT;
typedef enum { CblasNoTrans = 111, CblasTrans = 112 } CBLAS_TRANSPOSE;
void cblas_dgemm(CBLAS_LAYOUT layout, CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb,
                 int m, int n, int k, double alpha, const double* a, int lda,
                 const double* b, int ldb, double beta, double* c, int ldc);
void openblas_set_num_threads(int n);
}
#endif

namespace sasr {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto d = std::make_shared<TensorData>();
  d->data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
  d->shape = std::move(shape);
  d->requires_grad = requires_grad;
  return Tensor(std::move(d));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.values().begin(), t.values().end(), value);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
    throw ShapeError("tensor literal: " + std::to_string(values.size()) +
                     " values do not fill shape " + shape_str(shape));
  }
  auto d = std::make_shared<TensorData>();
  d->shape = std::move(shape);
  d->data = std::move(values);
  d->requires_grad = requires_grad;
  return Tensor(std::move(d));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

double Tensor::item() const {
  if (!is_scalar()) {
    throw ContractError("item() on tensor of shape " + shape_str(shape()));
  }
  return d_->data[0];
}

std::vector<double>& Tensor::grad() const {
  if (d_->grad.empty()) d_->grad.assign(d_->data.size(), 0.0);
  return d_->grad;
}

const std::vector<double>& Tensor::grad_view() const {
  if (d_->grad.empty()) {
    throw ContractError("gradient requested but never populated");
  }
  return d_->grad;
}

Tensor Tensor::detached_copy() const {
  auto d = std::make_shared<TensorData>();
  d->shape = d_->shape;
  d->data = d_->data;
  d->requires_grad = false;
  return Tensor(std::move(d));
}

const char* op_name(Op op) {
  switch (op) {
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Matmul: return "matmul";
    case Op::Broadcast: return "broadcast";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Softmax: return "softmax";
    case Op::LogSoftmax: return "log_softmax";
    case Op::Gather: return "gather";
    case Op::LayerNorm: return "layer_norm";
    case Op::Gelu: return "gelu";
    case Op::Scale: return "scale";
    case Op::Concat: return "concat";
    case Op::MaskFill: return "mask_fill";
  }
  return "?";
}

namespace {

// C[M,N] += op_a(A) * op_b(B). A is stored [M,K] ([K,M] when ta), B is
// stored [K,N] ([N,K] when tb). Row-major throughout.
void gemm_acc(bool ta, bool tb, int M, int N, int K, const double* A,
              const double* B, double* C) {
#ifdef SASR_USE_OPENBLAS
  static const bool threads_pinned = [] {
    openblas_set_num_threads(1);  // keeps results reproducible
    return true;
  }();
  (void)threads_pinned;
  const int lda = ta ? M : K;
  const int ldb = tb ? K : N;
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
              tb ? CblasTrans : CblasNoTrans, M, N, K, 1.0, A, lda, B, ldb,
              1.0, C, N);
#else
  if (!ta && !tb) {
    for (int m = 0; m < M; ++m) {
      double* crow = C + static_cast<size_t>(m) * N;
      const double* arow = A + static_cast<size_t>(m) * K;
      for (int k = 0; k < K; ++k) {
        const double av = arow[k];
        const double* brow = B + static_cast<size_t>(k) * N;
        for (int n = 0; n < N; ++n) crow[n] += av * brow[n];
      }
    }
  } else if (!ta && tb) {
    for (int m = 0; m < M; ++m) {
      const double* arow = A + static_cast<size_t>(m) * K;
      double* crow = C + static_cast<size_t>(m) * N;
      for (int n = 0; n < N; ++n) {
        const double* brow = B + static_cast<size_t>(n) * K;
        double acc = 0.0;
        for (int k = 0; k < K; ++k) acc += arow[k] * brow[k];
        crow[n] += acc;
      }
    }
  } else if (ta && !tb) {
    for (int k = 0; k < K; ++k) {
      const double* arow = A + static_cast<size_t>(k) * M;
      const double* brow = B + static_cast<size_t>(k) * N;
      for (int m = 0; m < M; ++m) {
        const double av = arow[m];
        double* crow = C + static_cast<size_t>(m) * N;
        for (int n = 0; n < N; ++n) crow[n] += av * brow[n];
      }
    }
  } else {
    for (int m = 0; m < M; ++m) {
      double* crow = C + static_cast<size_t>(m) * N;
      for (int n = 0; n < N; ++n) {
        const double* brow = B + static_cast<size_t>(n) * K;
        double acc = 0.0;
        for (int k = 0; k < K; ++k) acc += A[static_cast<size_t>(k) * M + m] * brow[k];
        crow[n] += acc;
      }
    }
  }
#endif
}

bool all_finite(const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

// True when `inner` equals the trailing dimensions of `outer`.
bool is_suffix(const Shape& inner, const Shape& outer) {
  if (inner.size() > outer.size()) return false;
  const size_t off = outer.size() - inner.size();
  for (size_t i = 0; i < inner.size(); ++i) {
    if (inner[i] != outer[off + i]) return false;
  }
  return true;
}

int last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

void require_rank2(const Tensor& t, const char* what) {
  if (t.shape().size() != 2) {
    throw ShapeError(std::string(what) + " requires a rank-2 tensor, got " +
                     shape_str(t.shape()));
  }
}

}  // namespace

void Tape::finish(Op op, Tensor& out, bool track, std::function<void()> vjp) {
  if (!all_finite(out.values())) {
    throw NumericError(std::string("non-finite output from ") + op_name(op));
  }
  if (track) {
    out.set_requires_grad(true);
    nodes_.push_back(Node{op, std::move(vjp)});
  }
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    if (is_suffix(b.shape(), a.shape())) return add(a, broadcast(b, a.shape()));
    if (is_suffix(a.shape(), b.shape())) return add(broadcast(a, b.shape()), b);
    throw ShapeError("add: incompatible shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  const size_t n = a.values().size();
  Tensor out = Tensor::zeros(a.shape());
  for (size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] + b.values()[i];
  const bool track = recording_ && (a.requires_grad() || b.requires_grad());
  finish(Op::Add, out, track, [a, b, out]() mutable {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    if (a.requires_grad()) {
      auto& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
  return out;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    if (is_suffix(b.shape(), a.shape())) return sub(a, broadcast(b, a.shape()));
    if (is_suffix(a.shape(), b.shape())) return sub(broadcast(a, b.shape()), b);
    throw ShapeError("sub: incompatible shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  const size_t n = a.values().size();
  Tensor out = Tensor::zeros(a.shape());
  for (size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] - b.values()[i];
  const bool track = recording_ && (a.requires_grad() || b.requires_grad());
  finish(Op::Sub, out, track, [a, b, out]() mutable {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    if (a.requires_grad()) {
      auto& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
  return out;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    if (is_suffix(b.shape(), a.shape())) return mul(a, broadcast(b, a.shape()));
    if (is_suffix(a.shape(), b.shape())) return mul(broadcast(a, b.shape()), b);
    throw ShapeError("mul: incompatible shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  const size_t n = a.values().size();
  Tensor out = Tensor::zeros(a.shape());
  for (size_t i = 0; i < n; ++i) out.values()[i] = a.values()[i] * b.values()[i];
  const bool track = recording_ && (a.requires_grad() || b.requires_grad());
  finish(Op::Mul, out, track, [a, b, out]() mutable {
    if (!out.has_grad()) return;
    const auto& g = out.grad();
    if (a.requires_grad()) {
      auto& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.values()[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad();
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.values()[i];
    }
  });
  return out;
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b, bool trans_a,
                    bool trans_b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const int M = trans_a ? a.shape()[1] : a.shape()[0];
  const int Ka = trans_a ? a.shape()[0] : a.shape()[1];
  const int Kb = trans_b ? b.shape()[1] : b.shape()[0];
  const int N = trans_b ? b.shape()[0] : b.shape()[1];
  if (Ka != Kb) {
    throw ShapeError("matmul: inner dimensions disagree, " +
                     shape_str(a.shape()) + (trans_a ? "^T" : "") + " x " +
                     shape_str(b.shape()) + (trans_b ? "^T" : ""));
  }
  const int K = Ka;
  Tensor out = Tensor::zeros({M, N});
  gemm_acc(trans_a, trans_b, M, N, K, a.values().data(), b.values().data(),
           out.values().data());
  const bool track = recording_ && (a.requires_grad() || b.requires_grad());
  finish(Op::Matmul, out, track, [a, b, out, trans_a, trans_b, M, N, K]() mutable {
    if (!out.has_grad()) return;
    const double* g = out.grad_view().data();
    if (a.requires_grad()) {
      double* ga = a.grad().data();
      if (!trans_a && !trans_b) {
        gemm_acc(false, true, M, K, N, g, b.values().data(), ga);
      } else if (!trans_a && trans_b) {
        gemm_acc(false, false, M, K, N, g, b.values().data(), ga);
      } else if (trans_a && !trans_b) {
        // A stored [K,M]: dA = B * dC^T
        gemm_acc(false, true, K, M, N, b.values().data(), g, ga);
      } else {
        // A stored [K,M]: dA = B^T * dC^T
        gemm_acc(true, true, K, M, N, b.values().data(), g, ga);
      }
    }
    if (b.requires_grad()) {
      double* gb = b.grad().data();
      if (!trans_a && !trans_b) {
        gemm_acc(true, false, K, N, M, a.values().data(), g, gb);
      } else if (!trans_a && trans_b) {
        // B stored [N,K]: dB = dC^T * A
        gemm_acc(true, false, N, K, M, g, a.values().data(), gb);
      } else if (trans_a && !trans_b) {
        // A stored [K,M]: dB = A * dC
        gemm_acc(false, false, K, N, M, a.values().data(), g, gb);
      } else {
        // B stored [N,K]: dB = dC^T * A^T
        gemm_acc(true, true, N, K, M, g, a.values().data(), gb);
      }
    }
  });
  return out;
}

Tensor Tape::broadcast(const Tensor& x, const Shape& target) {
  if (!is_suffix(x.shape(), target)) {
    throw ShapeError("broadcast: " + shape_str(x.shape()) +
                     " is not a trailing suffix of " + shape_str(target));
  }
  const size_t inner = x.values().size();
  const size_t total = static_cast<size_t>(shape_numel(target));
  const size_t repeats = inner == 0 ? 0 : total / inner;
  Tensor out = Tensor::zeros(target);
  for (size_t r = 0; r < repeats; ++r) {
    std::memcpy(out.values().data() + r * inner, x.values().data(),
                inner * sizeof(double));
  }
  const bool track = recording_ && x.requires_grad();
  finish(Op::Broadcast, out, track, [x, out, inner, repeats]() mutable {
    if (!out.has_grad()) return;
    const auto& g = out.grad_view();
    auto& gx = x.grad();
    for (size_t r = 0; r < repeats; ++r) {
      const double* block = g.data() + r * inner;
      for (size_t i = 0; i < inner; ++i) gx[i] += block[i];
    }
  });
  return out;
}

Tensor Tape::sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  Tensor out = Tensor::scalar(acc);
  const bool track = recording_ && x.requires_grad();
  finish(Op::Sum, out, track, [x, out]() mutable {
    if (!out.has_grad()) return;
    const double g = out.grad_view()[0];
    auto& gx = x.grad();
    for (double& v : gx) v += g;
  });
  return out;
}

Tensor Tape::mean(const Tensor& x) {
  if (x.numel() == 0) throw ContractError("mean of an empty tensor");
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  const double inv = 1.0 / static_cast<double>(x.numel());
  Tensor out = Tensor::scalar(acc * inv);
  const bool track = recording_ && x.requires_grad();
  finish(Op::Mean, out, track, [x, out, inv]() mutable {
    if (!out.has_grad()) return;
    const double g = out.grad_view()[0] * inv;
    auto& gx = x.grad();
    for (double& v : gx) v += g;
  });
  return out;
}

Tensor Tape::exp(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  for (size_t i = 0; i < x.values().size(); ++i) {
    out.values()[i] = std::exp(x.values()[i]);
  }
  const bool track = recording_ && x.requires_grad();
  finish(Op::Exp, out, track, [x, out]() mutable {
    if (!out.has_grad()) return;
    const auto& g = out.grad_view();
    auto& gx = x.grad();
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * out.values()[i];
  });
  return out;
}

Tensor Tape::log(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  for (size_t i = 0; i < x.values().size(); ++i) {
    out.values()[i] = std::log(x.values()[i]);
  }
  const bool track = recording_ && x.requires_grad();
  finish(Op::Log, out, track, [x, out]() mutable {
    if (!out.has_grad()) return;
    const auto& g = out.grad_view();
    auto& gx = x.grad();
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / x.values()[i];
  });
  return out;
}

namespace {

// Applies max-subtracted softmax row by row into `out`.
void softmax_rows(const std::vector<double>& in, std::vector<double>& out,
                  size_t rows, size_t cols) {
  for (size_t r = 0; r < rows; ++r) {
    const double* xi = in.data() + r * cols;
    double* yi = out.data() + r * cols;
    double mx = xi[0];
    for (size_t c = 1; c < cols; ++c) mx = std::max(mx, xi[c]);
    double z = 0.0;
    for (size_t c = 0; c < cols; ++c) {
      yi[c] = std::exp(xi[c] - mx);
      z += yi[c];
    }
    const double inv = 1.0 / z;
    for (size_t c = 0; c < cols; ++c) yi[c] *= inv;
  }
}

}  // namespace

Tensor Tape::softmax(const Tensor& x) {
  const size_t cols = static_cast<size_t>(last_dim(x.shape()));
  if (cols == 0) throw ShapeError("softmax over an empty axis");
  const size_t rows = x.values().size() / cols;
  Tensor out = Tensor::zeros(x.shape());
  softmax_rows(x.values(), out.values(), rows, cols);
  const bool track = recording_ && x.requires_grad();
  finish(Op::Softmax, out, track, [x, out, rows, cols]() mutable {
    if (!out.has_grad()) return;
    const auto& g = out.grad_view();
    auto& gx = x.grad();
    for (size_t r = 0; r < rows; ++r) {
      const double* s = out.values().data() + r * cols;
      const double* gr = g.data() + r * cols;
      double dot = 0.0;
      for (size_t c = 0; c < cols; ++c) dot += gr[c] * s[c];
      double* gxr = gx.data() + r * cols;
      for (size_t c = 0; c < cols; ++c) gxr[c] += s[c] * (gr[c] - dot);
    }
  });
  return out;
}

Tensor Tape::log_softmax(const Tensor& x) {
  const size_t cols = static_cast<size_t>(last_dim(x.shape()));
  if (cols == 0) throw ShapeError("log_softmax over an empty axis");
  const size_t rows = x.values().size() / cols;
  Tensor out = Tensor::zeros(x.shape());
  for (size_t r = 0; r < rows; ++r) {
    const double* xi = x.values().data() + r * cols;
    double* yi = out.values().data() + r * cols;
    double mx = xi[0];
    for (size_t c = 1; c < cols; ++c) mx = std::max(mx, xi[c]);
    double z = 0.0;
    for (size_t c = 0; c < cols; ++c) z += std::exp(xi[c] - mx);
    const double lz = std::log(z) + mx;
    for (size_t c = 0; c < cols; ++c) yi[c] = xi[c] - lz;
  }
  const bool track = recording_ && x.requires_grad();
  finish(Op::LogSoftmax, out, track, [x, out, rows, cols]() mutable {
    if (!out.has_grad()) return;
    const auto& g = out.grad_view();
    auto& gx = x.grad();
    for (size_t r = 0; r < rows; ++r) {
      const double* y = out.values().data() + r * cols;
      const double* gr = g.data() + r * cols;
      double gsum = 0.0;
      for (size_t c = 0; c < cols; ++c) gsum += gr[c];
      double* gxr = gx.data() + r * cols;
      for (size_t c = 0; c < cols; ++c) {
        gxr[c] += gr[c] - std::exp(y[c]) * gsum;
      }
    }
  });
  return out;
}

Tensor Tape::gather(const Tensor& x, const std::vector<int>& index) {
  require_rank2(x, "gather");
  const int rows = x.shape()[0];
  const int cols = x.shape()[1];
  if (static_cast<int>(index.size()) != rows) {
    throw ShapeError("gather: index length " + std::to_string(index.size()) +
                     " does not match " + std::to_string(rows) + " rows");
  }
  for (int r = 0; r < rows; ++r) {
    if (index[r] < 0 || index[r] >= cols) {
      throw ShapeError("gather: index " + std::to_string(index[r]) +
                       " out of range for axis of size " + std::to_string(cols));
    }
  }
  Tensor out = Tensor::zeros({rows});
  for (int r = 0; r < rows; ++r) {
    out.values()[r] = x.values()[static_cast<size_t>(r) * cols + index[r]];
  }
  const bool track = recording_ && x.requires_grad();
  finish(Op::Gather, out, track, [x, out, index, cols]() mutable {
    if (!out.has_grad()) return;
    const auto& g = out.grad_view();
    auto& gx = x.grad();
    for (size_t r = 0; r < g.size(); ++r) {
      gx[r * cols + index[r]] += g[r];
    }
  });
  return out;
}

Tensor Tape::layer_norm(const Tensor& x, const Tensor& gain,
                        const Tensor& bias, double eps) {
  const size_t d = static_cast<size_t>(last_dim(x.shape()));
  if (gain.shape() != Shape{static_cast<int>(d)} ||
      bias.shape() != Shape{static_cast<int>(d)}) {
    throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(d) +
                     "], got " + shape_str(gain.shape()) + " and " +
                     shape_str(bias.shape()));
  }
  const size_t rows = x.values().size() / d;
  Tensor out = Tensor::zeros(x.shape());
  // Saved activations for the backward rule.
  auto xhat = std::make_shared<std::vector<double>>(x.values().size());
  auto inv_sigma = std::make_shared<std::vector<double>>(rows);
  for (size_t r = 0; r < rows; ++r) {
    const double* xi = x.values().data() + r * d;
    double mu = 0.0;
    for (size_t j = 0; j < d; ++j) mu += xi[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (size_t j = 0; j < d; ++j) {
      const double c = xi[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)[r] = is;
    double* xh = xhat->data() + r * d;
    double* yi = out.values().data() + r * d;
    for (size_t j = 0; j < d; ++j) {
      xh[j] = (xi[j] - mu) * is;
      yi[j] = gain.values()[j] * xh[j] + bias.values()[j];
    }
  }
  const bool track =
      recording_ &&
      (x.requires_grad() || gain.requires_grad() || bias.requires_grad());
  finish(Op::LayerNorm, out, track,
         [x, gain, bias, out, xhat, inv_sigma, rows, d]() mutable {
           if (!out.has_grad()) return;
           const auto& g = out.grad_view();
           for (size_t r = 0; r < rows; ++r) {
             const double* gy = g.data() + r * d;
             const double* xh = xhat->data() + r * d;
             if (gain.requires_grad()) {
               auto& gg = gain.grad();
               for (size_t j = 0; j < d; ++j) gg[j] += gy[j] * xh[j];
             }
             if (bias.requires_grad()) {
               auto& gb = bias.grad();
               for (size_t j = 0; j < d; ++j) gb[j] += gy[j];
             }
             if (x.requires_grad()) {
               auto& gx = x.grad();
               double m1 = 0.0, m2 = 0.0;
               for (size_t j = 0; j < d; ++j) {
                 const double dxh = gy[j] * gain.values()[j];
                 m1 += dxh;
                 m2 += dxh * xh[j];
               }
               m1 /= static_cast<double>(d);
               m2 /= static_cast<double>(d);
               const double is = (*inv_sigma)[r];
               double* gxr = gx.data() + r * d;
               for (size_t j = 0; j < d; ++j) {
                 const double dxh = gy[j] * gain.values()[j];
                 gxr[j] += is * (dxh - m1 - xh[j] * m2);
               }
             }
           }
         });
  return out;
}

Tensor Tape::gelu(const Tensor& x) {
  constexpr double k0 = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k1 = 0.044715;
  Tensor out = Tensor::zeros(x.shape());
  for (size_t i = 0; i < x.values().size(); ++i) {
    const double v = x.values()[i];
    const double u = k0 * (v + k1 * v * v * v);
    out.values()[i] = 0.5 * v * (1.0 + std::tanh(u));
  }
  const bool track = recording_ && x.requires_grad();
  finish(Op::Gelu, out, track, [x, out]() mutable {
    if (!out.has_grad()) return;
    const auto& g = out.grad_view();
    auto& gx = x.grad();
    for (size_t i = 0; i < g.size(); ++i) {
      const double v = x.values()[i];
      const double u = k0 * (v + k1 * v * v * v);
      const double t = std::tanh(u);
      const double sech2 = 1.0 - t * t;
      const double du = k0 * (1.0 + 3.0 * k1 * v * v);
      gx[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * sech2 * du);
    }
  });
  return out;
}

Tensor Tape::scale(const Tensor& x, double c) {
  Tensor out = Tensor::zeros(x.shape());
  for (size_t i = 0; i < x.values().size(); ++i) {
    out.values()[i] = c * x.values()[i];
  }
  const bool track = recording_ && x.requires_grad();
  finish(Op::Scale, out, track, [x, out, c]() mutable {
    if (!out.has_grad()) return;
    const auto& g = out.grad_view();
    auto& gx = x.grad();
    for (size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
  });
  return out;
}

Tensor Tape::concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const Shape& first = parts[0].shape();
  if (first.empty()) throw ShapeError("concat requires rank >= 1");
  Shape lead(first.begin(), first.end() - 1);
  int total_cols = 0;
  std::vector<int> cols(parts.size());
  for (size_t p = 0; p < parts.size(); ++p) {
    const Shape& s = parts[p].shape();
    if (s.empty() ||
        Shape(s.begin(), s.end() - 1) != lead) {
      throw ShapeError("concat: part " + std::to_string(p) + " has shape " +
                       shape_str(s) + ", expected leading dims " +
                       shape_str(lead));
    }
    cols[p] = s.back();
    total_cols += s.back();
  }
  Shape out_shape = lead;
  out_shape.push_back(total_cols);
  const size_t rows = static_cast<size_t>(shape_numel(lead));
  Tensor out = Tensor::zeros(out_shape);
  size_t col_off = 0;
  for (size_t p = 0; p < parts.size(); ++p) {
    const size_t pc = static_cast<size_t>(cols[p]);
    for (size_t r = 0; r < rows; ++r) {
      std::memcpy(out.values().data() + r * total_cols + col_off,
                  parts[p].values().data() + r * pc, pc * sizeof(double));
    }
    col_off += pc;
  }
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  const bool track = recording_ && any;
  finish(Op::Concat, out, track, [parts, out, cols, rows, total_cols]() mutable {
    if (!out.has_grad()) return;
    const auto& g = out.grad_view();
    size_t off = 0;
    for (size_t p = 0; p < parts.size(); ++p) {
      const size_t pc = static_cast<size_t>(cols[p]);
      if (parts[p].requires_grad()) {
        auto& gp = parts[p].grad();
        for (size_t r = 0; r < rows; ++r) {
          const double* src = g.data() + r * total_cols + off;
          double* dst = gp.data() + r * pc;
          for (size_t c = 0; c < pc; ++c) dst[c] += src[c];
        }
      }
      off += pc;
    }
  });
  return out;
}

Tensor Tape::mask_fill(const Tensor& x, const std::vector<uint8_t>& mask,
                       double value) {
  if (mask.size() != x.values().size()) {
    throw ShapeError("mask_fill: mask has " + std::to_string(mask.size()) +
                     " entries for tensor of " +
                     std::to_string(x.values().size()));
  }
  Tensor out = Tensor::zeros(x.shape());
  for (size_t i = 0; i < mask.size(); ++i) {
    out.values()[i] = mask[i] ? value : x.values()[i];
  }
  const bool track = recording_ && x.requires_grad();
  finish(Op::MaskFill, out, track, [x, out, mask]() mutable {
    if (!out.has_grad()) return;
    const auto& g = out.grad_view();
    auto& gx = x.grad();
    for (size_t i = 0; i < g.size(); ++i) {
      if (!mask[i]) gx[i] += g[i];
    }
  });
  return out;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || !loss.is_scalar()) {
    throw ContractError("backward requires a scalar loss");
  }
  Tensor seed = loss;
  seed.grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->vjp();
  }
  nodes_.clear();
}

double global_grad_norm(const std::vector<Tensor>& params) {
  std::vector<double> partials;
  partials.reserve(params.size());
  for (const auto& p : params) {
    if (!p.has_grad()) {
      throw ContractError("global_grad_norm: parameter has no gradient");
    }
    double acc = 0.0;
    for (double g : p.grad_view()) acc += g * g;
    partials.push_back(acc);
  }
  // Combine partials in value order so the norm is independent of the
  // parameter-list ordering.
  std::sort(partials.begin(), partials.end());
  double total = 0.0;
  for (double v : partials) total += v;
  return std::sqrt(total);
}

void zero_grads(std::vector<Tensor>& params) {
  for (auto& p : params) p.zero_grad();
}

double finite_difference_check(Tape& tape, const std::function<Tensor()>& f,
                               const std::vector<Tensor>& params, double h,
                               int samples_per_param) {
  if (h <= 0) throw ContractError("finite_difference_check: h must be > 0");
  auto mutable_params = params;
  zero_grads(mutable_params);
  Tensor loss = f();
  tape.backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : mutable_params) {
    analytic.push_back(p.has_grad() ? p.grad_view()
                                    : std::vector<double>(p.numel(), 0.0));
  }

  double max_rel = 0.0;
  {
    NoGradGuard guard(tape);
    for (size_t pi = 0; pi < mutable_params.size(); ++pi) {
      auto& p = mutable_params[pi];
      const int64_t n = p.numel();
      std::vector<int64_t> coords(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
      if (n > samples_per_param) {
        std::partial_sort(coords.begin(), coords.begin() + samples_per_param,
                          coords.end(), [&](int64_t a, int64_t b) {
                            return std::abs(analytic[pi][a]) >
                                   std::abs(analytic[pi][b]);
                          });
        coords.resize(static_cast<size_t>(samples_per_param));
      }
      for (int64_t c : coords) {
        const double saved = p.values()[c];
        p.values()[c] = saved + h;
        const double fp = f().item();
        p.values()[c] = saved - h;
        const double fm = f().item();
        p.values()[c] = saved;
        const double numeric = (fp - fm) / (2.0 * h);
        const double rel = std::abs(analytic[pi][c] - numeric) /
                           (std::abs(numeric) + 1e-12);
        max_rel = std::max(max_rel, rel);
      }
    }
  }
  zero_grads(mutable_params);
  return max_rel;
}

}  // namespace sasr
