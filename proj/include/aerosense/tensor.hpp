// Dense double-precision tensors with reverse-mode automatic
// differentiation on an explicit tape, plus a finite-difference gradient
// checker. Matrix contractions are delegated to Eigen; every backward rule
// here is hand-derived.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <vector>

#include "aerosense/common.hpp"

namespace aerosense {

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->value.assign(numel(t.node_->shape), 0.0);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from(std::vector<int> shape, std::vector<double> data, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    if (data.size() != t.node_->value.size()) throw DataError("tensor data does not match shape");
    t.node_->value = std::move(data);
    return t;
  }

  static Tensor scalar_of(double v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return node_->value.size(); }

  std::vector<double>& values() { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }
  double* data() { return node_->value.data(); }
  const double* data() const { return node_->value.data(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }

  std::vector<double>& grad() {
    ensure_grad();
    return node_->grad;
  }
  const std::vector<double>& grad() const {
    const_cast<Tensor*>(this)->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    ensure_grad();
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  double scalar() const {
    if (size() != 1) throw DataError("scalar() on non-scalar tensor");
    return node_->value[0];
  }

  bool same_node(const Tensor& o) const { return node_ == o.node_; }

  static std::size_t numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw DataError("tensor dimensions must be positive");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

 private:
  struct Node {
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated on first use
    bool requires_grad = false;
  };

  void ensure_grad() {
    if (node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), 0.0);
  }

  std::shared_ptr<Node> node_;
};

// Ordered record of primitive operations; backward() replays the closures in
// exact reverse, accumulating gradients into every requires_grad leaf.
// Repeated backward calls keep accumulating into leaves; gradients of
// intermediate results are reset at the start of each replay.
class Tape {
 public:
  void push(Tensor out, std::function<void()> back) {
    steps_.push_back({std::move(out), std::move(back)});
  }

  void backward(Tensor loss) {
    if (loss.size() != 1) throw DataError("backward requires a scalar loss");
    for (auto& s : steps_) s.out.zero_grad();
    loss.grad()[0] += 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) it->back();
  }

  std::size_t size() const { return steps_.size(); }
  void clear() { steps_.clear(); }

 private:
  struct Step {
    Tensor out;
    std::function<void()> back;
  };
  std::vector<Step> steps_;
};

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline void record_unary(Tape* tape, const Tensor& a, Tensor& out, std::function<void()> back) {
  if (tape && a.requires_grad()) {
    out.set_requires_grad(true);
    tape->push(out, std::move(back));
  }
}

inline void record_binary(Tape* tape, const Tensor& a, const Tensor& b, Tensor& out,
                          std::function<void()> back) {
  if (tape && (a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    tape->push(out, std::move(back));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Contractions

// C = A * B. Supports (m,k)x(k,n), a leading batch dimension (B,m,k)x(k,n),
// and fully batched (B,m,k)x(B,k,n).
inline Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  using namespace detail;
  if (a.rank() == 2 && b.rank() == 2) {
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) throw DataError("matmul inner dimensions mismatch");
    Tensor out = Tensor::zeros({m, n});
    MatMap(out.data(), m, n).noalias() =
        ConstMatMap(a.data(), m, k) * ConstMatMap(b.data(), k, n);
    Tensor av = a, bv = b;
    record_binary(tape, a, b, out, [av, bv, out, m, k, n]() mutable {
      ConstMatMap dC(out.grad().data(), m, n);
      if (av.requires_grad())
        MatMap(av.grad().data(), m, k).noalias() += dC * ConstMatMap(bv.data(), k, n).transpose();
      if (bv.requires_grad())
        MatMap(bv.grad().data(), k, n).noalias() += ConstMatMap(av.data(), m, k).transpose() * dC;
    });
    return out;
  }
  if (a.rank() == 3 && b.rank() == 2) {
    const int bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
    if (b.dim(0) != k) throw DataError("matmul inner dimensions mismatch");
    Tensor out = Tensor::zeros({bs, m, n});
    MatMap(out.data(), bs * m, n).noalias() =
        ConstMatMap(a.data(), bs * m, k) * ConstMatMap(b.data(), k, n);
    Tensor av = a, bv = b;
    record_binary(tape, a, b, out, [av, bv, out, bs, m, k, n]() mutable {
      ConstMatMap dC(out.grad().data(), bs * m, n);
      if (av.requires_grad())
        MatMap(av.grad().data(), bs * m, k).noalias() +=
            dC * ConstMatMap(bv.data(), k, n).transpose();
      if (bv.requires_grad())
        MatMap(bv.grad().data(), k, n).noalias() +=
            ConstMatMap(av.data(), bs * m, k).transpose() * dC;
    });
    return out;
  }
  if (a.rank() == 3 && b.rank() == 3) {
    const int bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    if (b.dim(0) != bs || b.dim(1) != k) throw DataError("batched matmul shape mismatch");
    Tensor out = Tensor::zeros({bs, m, n});
    for (int i = 0; i < bs; ++i) {
      MatMap(out.data() + static_cast<std::size_t>(i) * m * n, m, n).noalias() =
          ConstMatMap(a.data() + static_cast<std::size_t>(i) * m * k, m, k) *
          ConstMatMap(b.data() + static_cast<std::size_t>(i) * k * n, k, n);
    }
    Tensor av = a, bv = b;
    record_binary(tape, a, b, out, [av, bv, out, bs, m, k, n]() mutable {
      for (int i = 0; i < bs; ++i) {
        ConstMatMap dC(out.grad().data() + static_cast<std::size_t>(i) * m * n, m, n);
        if (av.requires_grad())
          MatMap(av.grad().data() + static_cast<std::size_t>(i) * m * k, m, k).noalias() +=
              dC * ConstMatMap(bv.data() + static_cast<std::size_t>(i) * k * n, k, n).transpose();
        if (bv.requires_grad())
          MatMap(bv.grad().data() + static_cast<std::size_t>(i) * k * n, k, n).noalias() +=
              ConstMatMap(av.data() + static_cast<std::size_t>(i) * m * k, m, k).transpose() * dC;
      }
    });
    return out;
  }
  throw DataError("unsupported matmul ranks");
}

// C = A * B^T, batched: (B,m,k)x(B,n,k) -> (B,m,n); also (m,k)x(n,k).
inline Tensor matmul_nt(Tape* tape, const Tensor& a, const Tensor& b) {
  using namespace detail;
  if (a.rank() == 2 && b.rank() == 2) {
    const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k) throw DataError("matmul_nt inner dimensions mismatch");
    Tensor out = Tensor::zeros({m, n});
    MatMap(out.data(), m, n).noalias() =
        ConstMatMap(a.data(), m, k) * ConstMatMap(b.data(), n, k).transpose();
    Tensor av = a, bv = b;
    record_binary(tape, a, b, out, [av, bv, out, m, k, n]() mutable {
      ConstMatMap dC(out.grad().data(), m, n);
      if (av.requires_grad())
        MatMap(av.grad().data(), m, k).noalias() += dC * ConstMatMap(bv.data(), n, k);
      if (bv.requires_grad())
        MatMap(bv.grad().data(), n, k).noalias() += dC.transpose() * ConstMatMap(av.data(), m, k);
    });
    return out;
  }
  if (a.rank() == 3 && b.rank() == 3) {
    const int bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
    if (b.dim(0) != bs || b.dim(2) != k) throw DataError("batched matmul_nt shape mismatch");
    Tensor out = Tensor::zeros({bs, m, n});
    for (int i = 0; i < bs; ++i) {
      MatMap(out.data() + static_cast<std::size_t>(i) * m * n, m, n).noalias() =
          ConstMatMap(a.data() + static_cast<std::size_t>(i) * m * k, m, k) *
          ConstMatMap(b.data() + static_cast<std::size_t>(i) * n * k, n, k).transpose();
    }
    Tensor av = a, bv = b;
    record_binary(tape, a, b, out, [av, bv, out, bs, m, k, n]() mutable {
      for (int i = 0; i < bs; ++i) {
        ConstMatMap dC(out.grad().data() + static_cast<std::size_t>(i) * m * n, m, n);
        if (av.requires_grad())
          MatMap(av.grad().data() + static_cast<std::size_t>(i) * m * k, m, k).noalias() +=
              dC * ConstMatMap(bv.data() + static_cast<std::size_t>(i) * n * k, n, k);
        if (bv.requires_grad())
          MatMap(bv.grad().data() + static_cast<std::size_t>(i) * n * k, n, k).noalias() +=
              dC.transpose() * ConstMatMap(av.data() + static_cast<std::size_t>(i) * m * k, m, k);
      }
    });
    return out;
  }
  throw DataError("unsupported matmul_nt ranks");
}

// ---------------------------------------------------------------------------
// Elementwise and structural ops

inline Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DataError("add shape mismatch");
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] + b.values()[i];
  Tensor av = a, bv = b;
  detail::record_binary(tape, a, b, out, [av, bv, out]() mutable {
    const auto& g = out.grad();
    if (av.requires_grad()) {
      auto& ga = av.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (bv.requires_grad()) {
      auto& gb = bv.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
  return out;
}

inline Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DataError("sub shape mismatch");
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] - b.values()[i];
  Tensor av = a, bv = b;
  detail::record_binary(tape, a, b, out, [av, bv, out]() mutable {
    const auto& g = out.grad();
    if (av.requires_grad()) {
      auto& ga = av.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (bv.requires_grad()) {
      auto& gb = bv.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
  return out;
}

inline Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DataError("mul shape mismatch");
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] * b.values()[i];
  Tensor av = a, bv = b;
  detail::record_binary(tape, a, b, out, [av, bv, out]() mutable {
    const auto& g = out.grad();
    if (av.requires_grad()) {
      auto& ga = av.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv.values()[i];
    }
    if (bv.requires_grad()) {
      auto& gb = bv.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av.values()[i];
    }
  });
  return out;
}

inline Tensor mul_scalar(Tape* tape, const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] * c;
  Tensor av = a;
  detail::record_unary(tape, a, out, [av, out, c]() mutable {
    auto& ga = av.grad();
    const auto& g = out.grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
  });
  return out;
}

// (..., C) + bias(C), broadcast over leading dims.
inline Tensor add_rowvec(Tape* tape, const Tensor& a, const Tensor& bias) {
  if (bias.rank() != 1 || a.dim(a.rank() - 1) != bias.dim(0))
    throw DataError("add_rowvec bias shape mismatch");
  const std::size_t c = static_cast<std::size_t>(bias.dim(0));
  const std::size_t rows = a.size() / c;
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j)
      out.values()[r * c + j] = a.values()[r * c + j] + bias.values()[j];
  Tensor av = a, bv = bias;
  detail::record_binary(tape, a, bias, out, [av, bv, out, rows, c]() mutable {
    const auto& g = out.grad();
    if (av.requires_grad()) {
      auto& ga = av.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (bv.requires_grad()) {
      auto& gb = bv.grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
    }
  });
  return out;
}

inline Tensor reshape(Tape* tape, const Tensor& a, std::vector<int> shape) {
  if (Tensor::numel(shape) != a.size()) throw DataError("reshape changes element count");
  Tensor out = Tensor::from(std::move(shape), a.values());
  Tensor av = a;
  detail::record_unary(tape, a, out, [av, out]() mutable {
    auto& ga = av.grad();
    const auto& g = out.grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
  return out;
}

// Concatenate along the last axis; all parts share leading dimensions.
inline Tensor concat_cols(Tape* tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DataError("concat of zero tensors");
  const int r = parts[0].rank();
  std::size_t rows = 1;
  for (int i = 0; i + 1 < r; ++i) rows *= static_cast<std::size_t>(parts[0].dim(i));
  int total_c = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    if (p.rank() != r) throw DataError("concat rank mismatch");
    for (int i = 0; i + 1 < r; ++i)
      if (p.dim(i) != parts[0].dim(i)) throw DataError("concat leading dims mismatch");
    total_c += p.dim(r - 1);
    rg = rg || p.requires_grad();
  }
  std::vector<int> shape = parts[0].shape();
  shape[static_cast<std::size_t>(r - 1)] = total_c;
  Tensor out = Tensor::zeros(shape);
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    const std::size_t pc = static_cast<std::size_t>(p.dim(r - 1));
    for (std::size_t row = 0; row < rows; ++row)
      std::copy_n(p.data() + row * pc, pc,
                  out.data() + row * static_cast<std::size_t>(total_c) + off);
    off += pc;
  }
  if (tape && rg) {
    out.set_requires_grad(true);
    std::vector<Tensor> held = parts;
    Tensor ov = out;
    tape->push(out, [held, ov, rows, total_c]() mutable {
      const auto& g = ov.grad();
      std::size_t off2 = 0;
      for (Tensor& p : held) {
        const std::size_t pc = static_cast<std::size_t>(p.dim(p.rank() - 1));
        if (p.requires_grad()) {
          auto& gp = p.grad();
          for (std::size_t row = 0; row < rows; ++row)
            for (std::size_t j = 0; j < pc; ++j)
              gp[row * pc + j] += g[row * static_cast<std::size_t>(total_c) + off2 + j];
        }
        off2 += pc;
      }
    });
  }
  return out;
}

inline Tensor sigmoid(Tape* tape, const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = 1.0 / (1.0 + std::exp(-a.values()[i]));
  Tensor av = a;
  detail::record_unary(tape, a, out, [av, out]() mutable {
    auto& ga = av.grad();
    const auto& g = out.grad();
    const auto& y = out.values();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  });
  return out;
}

// Sum over one axis; the axis is removed from the shape.
inline Tensor sum_axis(Tape* tape, const Tensor& a, int axis) {
  const int r = a.rank();
  if (axis < 0 || axis >= r) throw DataError("sum_axis axis out of range");
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(a.dim(i));
  for (int i = axis + 1; i < r; ++i) inner *= static_cast<std::size_t>(a.dim(i));
  const std::size_t n = static_cast<std::size_t>(a.dim(axis));

  std::vector<int> shape;
  for (int i = 0; i < r; ++i)
    if (i != axis) shape.push_back(a.dim(i));
  if (shape.empty()) shape.push_back(1);
  Tensor out = Tensor::zeros(shape);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t j = 0; j < inner; ++j)
        out.values()[o * inner + j] += a.values()[(o * n + k) * inner + j];
  Tensor av = a;
  detail::record_unary(tape, a, out, [av, out, outer, inner, n]() mutable {
    auto& ga = av.grad();
    const auto& g = out.grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t j = 0; j < inner; ++j) ga[(o * n + k) * inner + j] += g[o * inner + j];
  });
  return out;
}

inline Tensor sum_all(Tape* tape, const Tensor& a) {
  Tensor out = Tensor::zeros({1});
  out.values()[0] = std::accumulate(a.values().begin(), a.values().end(), 0.0);
  Tensor av = a;
  detail::record_unary(tape, a, out, [av, out]() mutable {
    auto& ga = av.grad();
    const double g = out.grad()[0];
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
  return out;
}

// Elementwise Huber: a^2/2 inside |a| <= delta, linear outside.
inline Tensor huber(Tape* tape, const Tensor& a, double delta) {
  if (!(delta > 0.0)) throw ConfigError("huber delta must be > 0");
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a.values()[i];
    out.values()[i] = std::abs(x) <= delta ? 0.5 * x * x : delta * (std::abs(x) - 0.5 * delta);
  }
  Tensor av = a;
  detail::record_unary(tape, a, out, [av, out, delta]() mutable {
    auto& ga = av.grad();
    const auto& g = out.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = av.values()[i];
      ga[i] += g[i] * (std::abs(x) <= delta ? x : (x > 0.0 ? delta : -delta));
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Softmax with additive mask

// Softmax over the last axis of (logits + mask). Mask entries are 0 or -inf;
// -inf is realized as an additive -1e30 followed by exact zeroing of the
// masked outputs, so fully-masked rows come out all-zero with zero gradient.
inline Tensor masked_softmax(Tape* tape, const Tensor& logits, const Tensor& mask) {
  if (logits.shape() != mask.shape()) throw DataError("masked_softmax mask shape mismatch");
  const std::size_t c = static_cast<std::size_t>(logits.dim(logits.rank() - 1));
  const std::size_t rows = logits.size() / c;
  Tensor out = Tensor::zeros(logits.shape());

  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = logits.data() + r * c;
    const double* m = mask.data() + r * c;
    double* y = out.data() + r * c;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) {
      const double l = x[j] + std::max(m[j], -1e30);
      if (l > mx) mx = l;
    }
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double l = x[j] + std::max(m[j], -1e30);
      y[j] = std::exp(l - mx);
      s += y[j];
    }
    for (std::size_t j = 0; j < c; ++j) {
      y[j] = std::isinf(m[j]) ? 0.0 : y[j] / s;
    }
  }

  Tensor lv = logits;
  detail::record_unary(tape, logits, out, [lv, out, rows, c]() mutable {
    auto& gx = lv.grad();
    const auto& gy = out.grad();
    const auto& y = out.values();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += gy[r * c + j] * y[r * c + j];
      for (std::size_t j = 0; j < c; ++j)
        gx[r * c + j] += y[r * c + j] * (gy[r * c + j] - dot);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Normalization layers

// Per-row layer normalization over the last axis with learned gain/bias.
inline Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
  const std::size_t c = static_cast<std::size_t>(x.dim(x.rank() - 1));
  if (gain.size() != c || bias.size() != c) throw DataError("layer_norm gain/bias size mismatch");
  const std::size_t rows = x.size() / c;
  Tensor out = Tensor::zeros(x.shape());
  // saved activations for backward
  auto mu = std::make_shared<std::vector<double>>(rows);
  auto inv = std::make_shared<std::vector<double>>(rows);

  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * c;
    double m = 0.0;
    for (std::size_t j = 0; j < c; ++j) m += xr[j];
    m /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xr[j] - m) * (xr[j] - m);
    var /= static_cast<double>(c);
    const double iv = 1.0 / std::sqrt(var + eps);
    (*mu)[r] = m;
    (*inv)[r] = iv;
    double* yr = out.data() + r * c;
    for (std::size_t j = 0; j < c; ++j)
      yr[j] = gain.values()[j] * (xr[j] - m) * iv + bias.values()[j];
  }

  Tensor xv = x, gv = gain, bv = bias;
  const bool rg = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
  if (tape && rg) {
    out.set_requires_grad(true);
    Tensor ov = out;
    tape->push(out, [xv, gv, bv, ov, mu, inv, rows, c]() mutable {
      const auto& gy = ov.grad();
      const double cn = static_cast<double>(c);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv.values().data() + r * c;
        const double m = (*mu)[r], iv = (*inv)[r];
        double dvar = 0.0, dmu_a = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          const double dxhat = gy[r * c + j] * gv.values()[j];
          dvar += dxhat * (xr[j] - m);
          dmu_a += dxhat;
        }
        dvar *= -0.5 * iv * iv * iv;
        const double dmu = -iv * dmu_a;  // the d(var)/d(mu) term vanishes: sum of centered x is 0
        if (xv.requires_grad()) {
          auto& gx = xv.grad();
          for (std::size_t j = 0; j < c; ++j) {
            const double dxhat = gy[r * c + j] * gv.values()[j];
            gx[r * c + j] += dxhat * iv + dvar * 2.0 * (xr[j] - m) / cn + dmu / cn;
          }
        }
        if (gv.requires_grad()) {
          auto& gg = gv.grad();
          for (std::size_t j = 0; j < c; ++j) gg[j] += gy[r * c + j] * (xr[j] - m) * iv;
        }
        if (bv.requires_grad()) {
          auto& gb = bv.grad();
          for (std::size_t j = 0; j < c; ++j) gb[j] += gy[r * c + j];
        }
      }
    });
  }
  return out;
}

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;

  static BatchNormState identity(int c) {
    BatchNormState s;
    s.running_mean.assign(static_cast<std::size_t>(c), 0.0);
    s.running_var.assign(static_cast<std::size_t>(c), 1.0);
    return s;
  }
};

// Batch normalization over the rows of a 2D activation matrix. In train mode
// statistics are computed over the rows flagged valid (padding rows are kept
// out of the statistics but still normalized and passed through); eval mode
// is a fixed affine map from the running statistics. Population variance
// convention throughout.
inline Tensor batch_norm(Tape* tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         BatchNormState& state, bool train,
                         const std::vector<std::uint8_t>* row_valid = nullptr,
                         bool update_running = true, double momentum = 0.1, double eps = 1e-5) {
  if (x.rank() != 2) throw DataError("batch_norm expects a 2D activation matrix");
  const std::size_t rows = static_cast<std::size_t>(x.dim(0));
  const std::size_t c = static_cast<std::size_t>(x.dim(1));
  if (gamma.size() != c || beta.size() != c || state.running_mean.size() != c)
    throw DataError("batch_norm parameter size mismatch");
  if (row_valid && row_valid->size() != rows) throw DataError("batch_norm row_valid size mismatch");

  Tensor out = Tensor::zeros(x.shape());
  auto mean = std::make_shared<std::vector<double>>(c, 0.0);
  auto inv = std::make_shared<std::vector<double>>(c, 0.0);
  double vcount = 0.0;

  if (train) {
    std::vector<double> var(c, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      if (row_valid && !(*row_valid)[r]) continue;
      vcount += 1.0;
      for (std::size_t j = 0; j < c; ++j) (*mean)[j] += x.values()[r * c + j];
    }
    if (vcount > 0.0)
      for (std::size_t j = 0; j < c; ++j) (*mean)[j] /= vcount;
    for (std::size_t r = 0; r < rows; ++r) {
      if (row_valid && !(*row_valid)[r]) continue;
      for (std::size_t j = 0; j < c; ++j) {
        const double d = x.values()[r * c + j] - (*mean)[j];
        var[j] += d * d;
      }
    }
    for (std::size_t j = 0; j < c; ++j) {
      const double v = vcount > 0.0 ? var[j] / vcount : 1.0;
      (*inv)[j] = 1.0 / std::sqrt(v + eps);
      if (update_running && vcount > 0.0) {
        state.running_mean[j] = (1.0 - momentum) * state.running_mean[j] + momentum * (*mean)[j];
        state.running_var[j] = (1.0 - momentum) * state.running_var[j] + momentum * v;
      }
    }
  } else {
    for (std::size_t j = 0; j < c; ++j) {
      (*mean)[j] = state.running_mean[j];
      (*inv)[j] = 1.0 / std::sqrt(state.running_var[j] + eps);
    }
  }

  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j)
      out.values()[r * c + j] =
          gamma.values()[j] * (x.values()[r * c + j] - (*mean)[j]) * (*inv)[j] + beta.values()[j];

  const bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  if (tape && rg) {
    out.set_requires_grad(true);
    Tensor xv = x, gv = gamma, bv = beta, ov = out;
    std::shared_ptr<std::vector<std::uint8_t>> valid;
    if (row_valid) valid = std::make_shared<std::vector<std::uint8_t>>(*row_valid);
    tape->push(out, [xv, gv, bv, ov, mean, inv, valid, rows, c, train, vcount]() mutable {
      const auto& gy = ov.grad();
      auto is_valid = [&](std::size_t r) { return !valid || (*valid)[r] != 0; };
      if (gv.requires_grad() || bv.requires_grad()) {
        auto& gg = gv.grad();
        auto& gb = bv.grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) {
            const double xhat = (xv.values()[r * c + j] - (*mean)[j]) * (*inv)[j];
            if (gv.requires_grad()) gg[j] += gy[r * c + j] * xhat;
            if (bv.requires_grad()) gb[j] += gy[r * c + j];
          }
      }
      if (!xv.requires_grad()) return;
      auto& gx = xv.grad();
      if (!train || vcount == 0.0) {  // affine in x
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j)
            gx[r * c + j] += gy[r * c + j] * gv.values()[j] * (*inv)[j];
        return;
      }
      // train mode: the statistics are functions of the valid rows
      std::vector<double> dvar(c, 0.0), dmu(c, 0.0), dxhat_sum(c, 0.0), centered_sum(c, 0.0);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) {
          const double dxhat = gy[r * c + j] * gv.values()[j];
          const double d = xv.values()[r * c + j] - (*mean)[j];
          dvar[j] += dxhat * d;
          dxhat_sum[j] += dxhat;
          if (is_valid(r)) centered_sum[j] += d;
        }
      for (std::size_t j = 0; j < c; ++j) {
        dvar[j] *= -0.5 * (*inv)[j] * (*inv)[j] * (*inv)[j];
        dmu[j] = -(*inv)[j] * dxhat_sum[j] + dvar[j] * (-2.0 / vcount) * centered_sum[j];
      }
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) {
          const double dxhat = gy[r * c + j] * gv.values()[j];
          double g = dxhat * (*inv)[j];
          if (is_valid(r)) {
            const double d = xv.values()[r * c + j] - (*mean)[j];
            g += dvar[j] * 2.0 * d / vcount + dmu[j] / vcount;
          }
          gx[r * c + j] += g;
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dropout

// Key for the counter-based dropout stream: one per (epoch, batch, layer).
struct DropoutKey {
  std::uint64_t seed = 0;
  std::int64_t epoch = 0;
  std::int64_t batch = 0;
  std::int64_t layer = 0;

  std::uint64_t mix() const {
    std::uint64_t k = hash_combine(seed, static_cast<std::uint64_t>(epoch));
    k = hash_combine(k, static_cast<std::uint64_t>(batch));
    return hash_combine(k, static_cast<std::uint64_t>(layer));
  }
};

// Inverted dropout, active only in train mode. The keep mask is a pure
// function of (key, element index), so training is bit-reproducible.
inline Tensor dropout(Tape* tape, const Tensor& a, double p, const DropoutKey& key, bool train) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must be in [0, 1)");
  if (!train || p == 0.0) {
    Tensor out = Tensor::from(a.shape(), a.values());
    Tensor av = a;
    detail::record_unary(tape, a, out, [av, out]() mutable {
      auto& ga = av.grad();
      const auto& g = out.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
    return out;
  }
  const double scale = 1.0 / (1.0 - p);
  const std::uint64_t k = key.mix();
  auto keep = std::make_shared<std::vector<std::uint8_t>>(a.size());
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool kept = counter_uniform(k, i) >= p;
    (*keep)[i] = kept ? 1 : 0;
    out.values()[i] = kept ? a.values()[i] * scale : 0.0;
  }
  Tensor av = a;
  detail::record_unary(tape, a, out, [av, out, keep, scale]() mutable {
    auto& ga = av.grad();
    const auto& g = out.grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if ((*keep)[i]) ga[i] += g[i] * scale;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Count-filtered pooling over set rows

enum class Pooling { Sum, Mean, Max };

// (B, N, D) -> (B, D), aggregating only rows i < counts[b]. Padding rows are
// excluded even if numerically nonzero. Empty sets pool to zero.
inline Tensor pool_rows(Tape* tape, const Tensor& e, const std::vector<int>& counts, Pooling kind) {
  if (e.rank() != 3) throw DataError("pool_rows expects (B, N, D)");
  const std::size_t b = static_cast<std::size_t>(e.dim(0));
  const std::size_t n = static_cast<std::size_t>(e.dim(1));
  const std::size_t d = static_cast<std::size_t>(e.dim(2));
  if (counts.size() != b) throw DataError("pool_rows counts size mismatch");
  Tensor out = Tensor::zeros({e.dim(0), e.dim(2)});
  auto argmax = kind == Pooling::Max ? std::make_shared<std::vector<std::size_t>>(b * d, 0)
                                     : nullptr;

  for (std::size_t i = 0; i < b; ++i) {
    const int cnt = std::clamp(counts[i], 0, static_cast<int>(n));
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      if (kind == Pooling::Max) {
        if (cnt > 0) {
          std::size_t best = 0;
          double bv = e.values()[(i * n) * d + j];
          for (std::size_t r = 1; r < static_cast<std::size_t>(cnt); ++r) {
            const double v = e.values()[(i * n + r) * d + j];
            if (v > bv) {
              bv = v;
              best = r;
            }
          }
          acc = bv;
          (*argmax)[i * d + j] = best;
        }
      } else {
        for (std::size_t r = 0; r < static_cast<std::size_t>(cnt); ++r)
          acc += e.values()[(i * n + r) * d + j];
        if (kind == Pooling::Mean && cnt > 0) acc /= static_cast<double>(cnt);
      }
      out.values()[i * d + j] = acc;
    }
  }

  Tensor ev = e;
  auto cts = std::make_shared<std::vector<int>>(counts);
  detail::record_unary(tape, e, out, [ev, out, cts, argmax, b, n, d, kind]() mutable {
    auto& ge = ev.grad();
    const auto& g = out.grad();
    for (std::size_t i = 0; i < b; ++i) {
      const int cnt = std::clamp((*cts)[i], 0, static_cast<int>(n));
      if (cnt == 0) continue;
      for (std::size_t j = 0; j < d; ++j) {
        const double gy = g[i * d + j];
        switch (kind) {
          case Pooling::Sum:
            for (std::size_t r = 0; r < static_cast<std::size_t>(cnt); ++r)
              ge[(i * n + r) * d + j] += gy;
            break;
          case Pooling::Mean:
            for (std::size_t r = 0; r < static_cast<std::size_t>(cnt); ++r)
              ge[(i * n + r) * d + j] += gy / static_cast<double>(cnt);
            break;
          case Pooling::Max:
            ge[(i * n + (*argmax)[i * d + j]) * d + j] += gy;
            break;
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking

// Central differences against the tape gradient. `forward` must rebuild the
// computation from the current parameter values on the tape it is given and
// return the scalar loss. Returns the maximum relative error
// |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|) over all parameter coordinates.
inline double grad_check(const std::function<Tensor(Tape&)>& forward, std::vector<Tensor> params,
                         double h = 1e-5) {
  Tape tape;
  Tensor loss = forward(tape);
  for (Tensor& p : params) p.zero_grad();
  tape.backward(loss);

  std::vector<std::vector<double>> g_ad;
  g_ad.reserve(params.size());
  for (Tensor& p : params) g_ad.push_back(p.grad());

  double max_rel = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p.values()[i];
      p.values()[i] = saved + h;
      Tape t_plus;
      const double f_plus = forward(t_plus).scalar();
      p.values()[i] = saved - h;
      Tape t_minus;
      const double f_minus = forward(t_minus).scalar();
      p.values()[i] = saved;
      const double g_fd = (f_plus - f_minus) / (2.0 * h);
      const double g = g_ad[pi][i];
      const double rel = std::abs(g - g_fd) / std::max(1e-8, std::abs(g) + std::abs(g_fd));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace aerosense
