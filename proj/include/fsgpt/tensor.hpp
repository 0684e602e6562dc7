#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// The tape is define-by-run: every differentiable op executed through a Tape
// appends one node, so the node list is already in topological order and a
// single reverse sweep computes all gradients. A tape and the tensors built
// on it belong to one execution context; independent contexts may run in
// parallel as long as they share no mutable tensors.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "fsgpt/common.hpp"
#include "fsgpt/rng.hpp"

namespace fsgpt {

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (size_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream out;
  out << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out << " x ";
    out << s[i];
  }
  out << "]";
  return out.str();
}

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a backward pass touches this tensor
  bool requires_grad = false;
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), requires_grad, T{0});
  }

  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    return filled(std::move(shape), requires_grad, v);
  }

  static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
    size_t n = shape_numel(shape);
    if (shape.empty() || n != data.size()) {
      throw ShapeError(cat("Tensor::from: shape ", shape_str(shape), " wants ", n,
                           " elements, got ", data.size()));
    }
    for (size_t e : shape) {
      if (e == 0) throw ShapeError("Tensor::from: zero extent in " + shape_str(shape));
    }
    Tensor t;
    t.s_ = std::make_shared<TensorStorage<T>>();
    t.s_->shape = std::move(shape);
    t.s_->value = std::move(data);
    t.s_->requires_grad = requires_grad;
    return t;
  }

  bool valid() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  size_t rank() const { return s_->shape.size(); }
  size_t extent(size_t axis) const { return s_->shape.at(axis); }
  size_t numel() const { return s_->value.size(); }

  // Tensor is a shared handle: these mutate the pointed-to storage, so they
  // are const members (copies captured in backward closures use them too).
  std::vector<T>& value() const { return s_->value; }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool rg) const { s_->requires_grad = rg; }

  bool has_grad() const { return !s_->grad.empty(); }
  std::vector<T>& grad() const {
    if (s_->grad.empty()) throw ContractError("Tensor::grad: gradient not populated");
    return s_->grad;
  }
  void ensure_grad() const {
    if (s_->grad.empty()) s_->grad.assign(s_->value.size(), T{0});
  }
  void zero_grad() const { s_->grad.clear(); }

  T item() const {
    if (numel() != 1) {
      throw ContractError("Tensor::item: tensor of shape " + shape_str(shape()) +
                          " is not a scalar");
    }
    return s_->value[0];
  }

  // Storage identity, used for graph introspection and parameter bookkeeping.
  const void* id() const { return s_.get(); }
  TensorStorage<T>* storage() const { return s_.get(); }

 private:
  static Tensor filled(Shape shape, bool requires_grad, T fill) {
    size_t n = shape_numel(shape);
    if (shape.empty()) throw ShapeError("Tensor: rank-0 shapes are not supported");
    for (size_t e : shape) {
      if (e == 0) throw ShapeError("Tensor: zero extent in " + shape_str(shape));
    }
    Tensor t;
    t.s_ = std::make_shared<TensorStorage<T>>();
    t.s_->shape = std::move(shape);
    t.s_->value.assign(n, fill);
    t.s_->requires_grad = requires_grad;
    return t;
  }

  std::shared_ptr<TensorStorage<T>> s_;
};

namespace detail {

inline std::vector<size_t> row_major_strides(const Shape& s) {
  std::vector<size_t> st(s.size(), 1);
  for (size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

}  // namespace detail

template <typename T>
class Tape {
 public:
  struct Node {
    const char* op;
    std::vector<const void*> inputs;
    const void* output;
    std::function<void()> backward;
  };

  bool recording = true;        // false: forward-only, no nodes kept
  bool validate_finite = false; // true: scan every op output for NaN/inf

  const std::vector<Node>& nodes() const { return nodes_; }
  size_t size() const { return nodes_.size(); }
  void reset() {
    nodes_.clear();
    matmul_multiplies_ = 0;
  }

  // Scalar multiplications performed by matrix products (forward only).
  uint64_t matmul_multiplies() const { return matmul_multiplies_; }
  void reset_matmul_multiplies() { matmul_multiplies_ = 0; }

  size_t last_backward_visits() const { return last_backward_visits_; }

  Tensor<T> leaf(Shape shape, std::vector<T> data, bool requires_grad = false) {
    return Tensor<T>::from(std::move(shape), std::move(data), requires_grad);
  }

  Tensor<T> constant(Shape shape, T fill) { return Tensor<T>::full(std::move(shape), fill); }

  // ---- matrix products --------------------------------------------------

  // a: [batch..., m, k], b: [batch..., k, n] or [k, n] (shared across batch)
  Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() < 2 || b.rank() < 2) {
      throw ShapeError(cat("matmul: ranks must be >= 2, got ", shape_str(a.shape()), " x ",
                           shape_str(b.shape())));
    }
    const size_t m = a.extent(a.rank() - 2);
    const size_t k = a.extent(a.rank() - 1);
    const size_t k2 = b.extent(b.rank() - 2);
    const size_t n = b.extent(b.rank() - 1);
    const bool shared_b = b.rank() == 2 && a.rank() > 2;
    if (k != k2 || (!shared_b && b.rank() != a.rank())) {
      throw ShapeError(cat("matmul: incompatible shapes ", shape_str(a.shape()), " x ",
                           shape_str(b.shape())));
    }
    Shape out_shape(a.shape());
    out_shape[out_shape.size() - 1] = n;
    size_t batch = 1;
    for (size_t i = 0; i + 2 < a.rank(); ++i) {
      batch *= a.extent(i);
      if (!shared_b && b.extent(i) != a.extent(i)) {
        throw ShapeError(cat("matmul: batch extents differ: ", shape_str(a.shape()), " x ",
                             shape_str(b.shape())));
      }
    }
    Tensor<T> out = Tensor<T>::zeros(out_shape);
    const T* av = a.value().data();
    const T* bv = b.value().data();
    T* cv = out.value().data();
    for (size_t bi = 0; bi < batch; ++bi) {
      const T* A = av + bi * m * k;
      const T* B = shared_b ? bv : bv + bi * k * n;
      T* C = cv + bi * m * n;
      for (size_t i = 0; i < m; ++i) {
        T* crow = C + i * n;
        const T* arow = A + i * k;
        for (size_t kk = 0; kk < k; ++kk) {
          const T aik = arow[kk];
          const T* brow = B + kk * n;
          for (size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
      }
    }
    matmul_multiplies_ += static_cast<uint64_t>(batch) * m * n * k;
    finish("matmul", {a, b}, out, [a, b, out, m, n, k, batch, shared_b]() {
      const auto& g = out.storage()->grad;
      const T* gv = g.data();
      const T* av2 = a.value().data();
      const T* bv2 = b.value().data();
      if (a.requires_grad()) {
        a.ensure_grad();
        T* da = a.storage()->grad.data();
        for (size_t bi = 0; bi < batch; ++bi) {
          const T* B = shared_b ? bv2 : bv2 + bi * k * n;
          const T* G = gv + bi * m * n;
          T* dA = da + bi * m * k;
          for (size_t i = 0; i < m; ++i) {
            const T* grow = G + i * n;
            T* darow = dA + i * k;
            for (size_t kk = 0; kk < k; ++kk) {
              const T* brow = B + kk * n;
              T acc{0};
              for (size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
              darow[kk] += acc;
            }
          }
        }
      }
      if (b.requires_grad()) {
        b.ensure_grad();
        T* db = b.storage()->grad.data();
        for (size_t bi = 0; bi < batch; ++bi) {
          const T* A = av2 + bi * m * k;
          const T* G = gv + bi * m * n;
          T* dB = shared_b ? db : db + bi * k * n;
          for (size_t i = 0; i < m; ++i) {
            const T* arow = A + i * k;
            const T* grow = G + i * n;
            for (size_t kk = 0; kk < k; ++kk) {
              const T aik = arow[kk];
              T* dbrow = dB + kk * n;
              for (size_t j = 0; j < n; ++j) dbrow[j] += aik * grow[j];
            }
          }
        }
      }
    });
    return out;
  }

  // x: [..., k] -> [..., n] with weight [k, n], bias [n]
  Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
    if (x.rank() < 1 || w.rank() != 2 || bias.rank() != 1) {
      throw ShapeError("linear: expected x [..., k], w [k, n], bias [n]");
    }
    const size_t k = x.extent(x.rank() - 1);
    const size_t n = w.extent(1);
    if (w.extent(0) != k || bias.extent(0) != n) {
      throw ShapeError(cat("linear: incompatible shapes x=", shape_str(x.shape()),
                           " w=", shape_str(w.shape()), " bias=", shape_str(bias.shape())));
    }
    const size_t rows = x.numel() / k;
    Shape out_shape(x.shape());
    out_shape[out_shape.size() - 1] = n;
    Tensor<T> out = Tensor<T>::zeros(out_shape);
    const T* xv = x.value().data();
    const T* wv = w.value().data();
    const T* bv = bias.value().data();
    T* ov = out.value().data();
    for (size_t r = 0; r < rows; ++r) {
      T* orow = ov + r * n;
      std::memcpy(orow, bv, n * sizeof(T));
      const T* xrow = xv + r * k;
      for (size_t kk = 0; kk < k; ++kk) {
        const T xk = xrow[kk];
        const T* wrow = wv + kk * n;
        for (size_t j = 0; j < n; ++j) orow[j] += xk * wrow[j];
      }
    }
    matmul_multiplies_ += static_cast<uint64_t>(rows) * k * n;
    finish("linear", {x, w, bias}, out, [x, w, bias, out, rows, k, n]() {
      const T* gv = out.storage()->grad.data();
      const T* xv2 = x.value().data();
      const T* wv2 = w.value().data();
      if (x.requires_grad()) {
        x.ensure_grad();
        T* dx = x.storage()->grad.data();
        for (size_t r = 0; r < rows; ++r) {
          const T* grow = gv + r * n;
          T* dxrow = dx + r * k;
          for (size_t kk = 0; kk < k; ++kk) {
            const T* wrow = wv2 + kk * n;
            T acc{0};
            for (size_t j = 0; j < n; ++j) acc += grow[j] * wrow[j];
            dxrow[kk] += acc;
          }
        }
      }
      if (w.requires_grad()) {
        w.ensure_grad();
        T* dw = w.storage()->grad.data();
        for (size_t r = 0; r < rows; ++r) {
          const T* xrow = xv2 + r * k;
          const T* grow = gv + r * n;
          for (size_t kk = 0; kk < k; ++kk) {
            const T xk = xrow[kk];
            T* dwrow = dw + kk * n;
            for (size_t j = 0; j < n; ++j) dwrow[j] += xk * grow[j];
          }
        }
      }
      if (bias.requires_grad()) {
        bias.ensure_grad();
        T* db = bias.storage()->grad.data();
        for (size_t r = 0; r < rows; ++r) {
          const T* grow = gv + r * n;
          for (size_t j = 0; j < n; ++j) db[j] += grow[j];
        }
      }
    });
    return out;
  }

  // ---- normalization and activations -------------------------------------

  Tensor<T> softmax_lastdim(const Tensor<T>& x) {
    const size_t n = x.extent(x.rank() - 1);
    const size_t rows = x.numel() / n;
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* xv = x.value().data();
    T* ov = out.value().data();
    for (size_t r = 0; r < rows; ++r) {
      const T* xrow = xv + r * n;
      T* orow = ov + r * n;
      T mx = xrow[0];
      for (size_t j = 1; j < n; ++j) mx = std::max(mx, xrow[j]);
      double sum = 0.0;
      for (size_t j = 0; j < n; ++j) {
        const double e = std::exp(static_cast<double>(xrow[j] - mx));
        orow[j] = static_cast<T>(e);
        sum += e;
      }
      const double inv = 1.0 / sum;
      for (size_t j = 0; j < n; ++j) orow[j] = static_cast<T>(orow[j] * inv);
    }
    finish("softmax_lastdim", {x}, out, [x, out, rows, n]() {
      if (!x.requires_grad()) return;
      x.ensure_grad();
      const T* gv = out.storage()->grad.data();
      const T* yv = out.value().data();
      T* dx = x.storage()->grad.data();
      for (size_t r = 0; r < rows; ++r) {
        const T* grow = gv + r * n;
        const T* yrow = yv + r * n;
        T* dxrow = dx + r * n;
        double dot = 0.0;
        for (size_t j = 0; j < n; ++j) dot += static_cast<double>(grow[j]) * yrow[j];
        for (size_t j = 0; j < n; ++j) {
          dxrow[j] += static_cast<T>(yrow[j] * (static_cast<double>(grow[j]) - dot));
        }
      }
    });
    return out;
  }

  // Per-position normalization over the last dim (population variance),
  // then elementwise affine with gain/bias of length d.
  Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                       double eps) {
    const size_t d = x.extent(x.rank() - 1);
    if (gain.rank() != 1 || bias.rank() != 1 || gain.extent(0) != d || bias.extent(0) != d) {
      throw ShapeError(cat("layer_norm: gain/bias must be [", d, "], got ",
                           shape_str(gain.shape()), " and ", shape_str(bias.shape())));
    }
    const size_t rows = x.numel() / d;
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    auto mu = std::make_shared<std::vector<double>>(rows);
    auto inv = std::make_shared<std::vector<double>>(rows);
    const T* xv = x.value().data();
    const T* gv = gain.value().data();
    const T* bv = bias.value().data();
    T* ov = out.value().data();
    for (size_t r = 0; r < rows; ++r) {
      const T* xrow = xv + r * d;
      double m = 0.0;
      for (size_t j = 0; j < d; ++j) m += xrow[j];
      m /= static_cast<double>(d);
      double var = 0.0;
      for (size_t j = 0; j < d; ++j) {
        const double diff = xrow[j] - m;
        var += diff * diff;
      }
      var /= static_cast<double>(d);
      const double iv = 1.0 / std::sqrt(var + eps);
      (*mu)[r] = m;
      (*inv)[r] = iv;
      T* orow = ov + r * d;
      for (size_t j = 0; j < d; ++j) {
        orow[j] = static_cast<T>(gv[j] * ((xrow[j] - m) * iv) + bv[j]);
      }
    }
    finish("layer_norm", {x, gain, bias}, out, [x, gain, bias, out, mu, inv, rows, d]() {
      const T* g = out.storage()->grad.data();
      const T* xv2 = x.value().data();
      const T* gainv = gain.value().data();
      for (size_t r = 0; r < rows; ++r) {
        const T* grow = g + r * d;
        const T* xrow = xv2 + r * d;
        const double m = (*mu)[r];
        const double iv = (*inv)[r];
        if (x.requires_grad()) {
          x.ensure_grad();
          T* dxrow = x.storage()->grad.data() + r * d;
          double s1 = 0.0, s2 = 0.0;
          for (size_t j = 0; j < d; ++j) {
            const double xhat = (xrow[j] - m) * iv;
            const double gdy = static_cast<double>(gainv[j]) * grow[j];
            s1 += gdy;
            s2 += gdy * xhat;
          }
          s1 /= static_cast<double>(d);
          s2 /= static_cast<double>(d);
          for (size_t j = 0; j < d; ++j) {
            const double xhat = (xrow[j] - m) * iv;
            const double gdy = static_cast<double>(gainv[j]) * grow[j];
            dxrow[j] += static_cast<T>(iv * (gdy - s1 - xhat * s2));
          }
        }
        if (gain.requires_grad()) {
          gain.ensure_grad();
          T* dg = gain.storage()->grad.data();
          for (size_t j = 0; j < d; ++j) {
            dg[j] += static_cast<T>(grow[j] * ((xrow[j] - m) * iv));
          }
        }
        if (bias.requires_grad()) {
          bias.ensure_grad();
          T* db = bias.storage()->grad.data();
          for (size_t j = 0; j < d; ++j) db[j] += grow[j];
        }
      }
    });
    return out;
  }

  Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* xv = x.value().data();
    T* ov = out.value().data();
    for (size_t i = 0; i < x.numel(); ++i) {
      const double v = xv[i];
      if (v >= 0.0) {
        ov[i] = static_cast<T>(1.0 / (1.0 + std::exp(-v)));
      } else {
        const double e = std::exp(v);
        ov[i] = static_cast<T>(e / (1.0 + e));
      }
    }
    finish("sigmoid", {x}, out, [x, out]() {
      if (!x.requires_grad()) return;
      x.ensure_grad();
      const T* g = out.storage()->grad.data();
      const T* y = out.value().data();
      T* dx = x.storage()->grad.data();
      for (size_t i = 0; i < out.numel(); ++i) dx[i] += g[i] * y[i] * (T{1} - y[i]);
    });
    return out;
  }

  // tanh approximation of gelu
  Tensor<T> gelu(const Tensor<T>& x) {
    constexpr double kA = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double kB = 0.044715;
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* xv = x.value().data();
    T* ov = out.value().data();
    for (size_t i = 0; i < x.numel(); ++i) {
      const double v = xv[i];
      const double t = std::tanh(kA * (v + kB * v * v * v));
      ov[i] = static_cast<T>(0.5 * v * (1.0 + t));
    }
    finish("gelu", {x}, out, [x, out]() {
      if (!x.requires_grad()) return;
      x.ensure_grad();
      const T* g = out.storage()->grad.data();
      const T* xv2 = x.value().data();
      T* dx = x.storage()->grad.data();
      for (size_t i = 0; i < out.numel(); ++i) {
        const double v = xv2[i];
        const double t = std::tanh(kA * (v + kB * v * v * v));
        const double du = kA * (1.0 + 3.0 * kB * v * v);
        const double dy = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
        dx[i] += static_cast<T>(g[i] * dy);
      }
    });
    return out;
  }

  // ---- elementwise -------------------------------------------------------

  Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("add", a, b);
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* av = a.value().data();
    const T* bv = b.value().data();
    T* ov = out.value().data();
    for (size_t i = 0; i < out.numel(); ++i) ov[i] = av[i] + bv[i];
    finish("add", {a, b}, out, [a, b, out]() {
      const T* g = out.storage()->grad.data();
      if (a.requires_grad()) {
        a.ensure_grad();
        T* da = a.storage()->grad.data();
        for (size_t i = 0; i < out.numel(); ++i) da[i] += g[i];
      }
      if (b.requires_grad()) {
        b.ensure_grad();
        T* db = b.storage()->grad.data();
        for (size_t i = 0; i < out.numel(); ++i) db[i] += g[i];
      }
    });
    return out;
  }

  Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("sub", a, b);
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* av = a.value().data();
    const T* bv = b.value().data();
    T* ov = out.value().data();
    for (size_t i = 0; i < out.numel(); ++i) ov[i] = av[i] - bv[i];
    finish("sub", {a, b}, out, [a, b, out]() {
      const T* g = out.storage()->grad.data();
      if (a.requires_grad()) {
        a.ensure_grad();
        T* da = a.storage()->grad.data();
        for (size_t i = 0; i < out.numel(); ++i) da[i] += g[i];
      }
      if (b.requires_grad()) {
        b.ensure_grad();
        T* db = b.storage()->grad.data();
        for (size_t i = 0; i < out.numel(); ++i) db[i] -= g[i];
      }
    });
    return out;
  }

  Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("mul", a, b);
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* av = a.value().data();
    const T* bv = b.value().data();
    T* ov = out.value().data();
    for (size_t i = 0; i < out.numel(); ++i) ov[i] = av[i] * bv[i];
    finish("mul", {a, b}, out, [a, b, out]() {
      const T* g = out.storage()->grad.data();
      const T* av2 = a.value().data();
      const T* bv2 = b.value().data();
      if (a.requires_grad()) {
        a.ensure_grad();
        T* da = a.storage()->grad.data();
        for (size_t i = 0; i < out.numel(); ++i) da[i] += g[i] * bv2[i];
      }
      if (b.requires_grad()) {
        b.ensure_grad();
        T* db = b.storage()->grad.data();
        for (size_t i = 0; i < out.numel(); ++i) db[i] += g[i] * av2[i];
      }
    });
    return out;
  }

  Tensor<T> scalar_mul(const Tensor<T>& x, double c) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* xv = x.value().data();
    T* ov = out.value().data();
    for (size_t i = 0; i < out.numel(); ++i) ov[i] = static_cast<T>(xv[i] * c);
    finish("scalar_mul", {x}, out, [x, out, c]() {
      if (!x.requires_grad()) return;
      x.ensure_grad();
      const T* g = out.storage()->grad.data();
      T* dx = x.storage()->grad.data();
      for (size_t i = 0; i < out.numel(); ++i) dx[i] += static_cast<T>(g[i] * c);
    });
    return out;
  }

  Tensor<T> add_scalar(const Tensor<T>& x, double c) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* xv = x.value().data();
    T* ov = out.value().data();
    for (size_t i = 0; i < out.numel(); ++i) ov[i] = static_cast<T>(xv[i] + c);
    finish("add_scalar", {x}, out, [x, out]() {
      if (!x.requires_grad()) return;
      x.ensure_grad();
      const T* g = out.storage()->grad.data();
      T* dx = x.storage()->grad.data();
      for (size_t i = 0; i < out.numel(); ++i) dx[i] += g[i];
    });
    return out;
  }

  // ---- reductions ----------------------------------------------------------

  Tensor<T> sum(const Tensor<T>& x) {
    double acc = 0.0;
    for (T v : x.value()) acc += v;
    Tensor<T> out = Tensor<T>::from({1}, {static_cast<T>(acc)});
    finish("sum", {x}, out, [x, out]() {
      if (!x.requires_grad()) return;
      x.ensure_grad();
      const T g = out.storage()->grad[0];
      T* dx = x.storage()->grad.data();
      for (size_t i = 0; i < x.numel(); ++i) dx[i] += g;
    });
    return out;
  }

  Tensor<T> mean(const Tensor<T>& x) {
    double acc = 0.0;
    for (T v : x.value()) acc += v;
    const double n = static_cast<double>(x.numel());
    Tensor<T> out = Tensor<T>::from({1}, {static_cast<T>(acc / n)});
    finish("mean", {x}, out, [x, out, n]() {
      if (!x.requires_grad()) return;
      x.ensure_grad();
      const double g = out.storage()->grad[0];
      T* dx = x.storage()->grad.data();
      for (size_t i = 0; i < x.numel(); ++i) dx[i] += static_cast<T>(g / n);
    });
    return out;
  }

  // mean((a - b)^2)
  Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("mse", a, b);
    const double n = static_cast<double>(a.numel());
    double acc = 0.0;
    const T* av = a.value().data();
    const T* bv = b.value().data();
    for (size_t i = 0; i < a.numel(); ++i) {
      const double diff = static_cast<double>(av[i]) - bv[i];
      acc += diff * diff;
    }
    Tensor<T> out = Tensor<T>::from({1}, {static_cast<T>(acc / n)});
    finish("mse", {a, b}, out, [a, b, out, n]() {
      const double g = out.storage()->grad[0];
      const T* av2 = a.value().data();
      const T* bv2 = b.value().data();
      const double scale = 2.0 * g / n;
      if (a.requires_grad()) {
        a.ensure_grad();
        T* da = a.storage()->grad.data();
        for (size_t i = 0; i < a.numel(); ++i) {
          da[i] += static_cast<T>(scale * (static_cast<double>(av2[i]) - bv2[i]));
        }
      }
      if (b.requires_grad()) {
        b.ensure_grad();
        T* db = b.storage()->grad.data();
        for (size_t i = 0; i < a.numel(); ++i) {
          db[i] -= static_cast<T>(scale * (static_cast<double>(av2[i]) - bv2[i]));
        }
      }
    });
    return out;
  }

  // ---- shape surgery -------------------------------------------------------

  Tensor<T> concat(const std::vector<Tensor<T>>& parts, size_t axis) {
    if (parts.empty()) throw ContractError("concat: no inputs");
    const Shape& first = parts[0].shape();
    if (axis >= first.size()) throw ShapeError("concat: axis out of range");
    size_t axis_total = 0;
    for (const auto& p : parts) {
      if (p.rank() != first.size()) {
        throw ShapeError(cat("concat: rank mismatch ", shape_str(p.shape()), " vs ",
                             shape_str(first)));
      }
      for (size_t i = 0; i < first.size(); ++i) {
        if (i != axis && p.extent(i) != first[i]) {
          throw ShapeError(cat("concat: extent mismatch at axis ", i, ": ",
                               shape_str(p.shape()), " vs ", shape_str(first)));
        }
      }
      axis_total += p.extent(axis);
    }
    Shape out_shape(first);
    out_shape[axis] = axis_total;
    Tensor<T> out = Tensor<T>::zeros(out_shape);
    size_t outer = 1;
    for (size_t i = 0; i < axis; ++i) outer *= first[i];
    size_t inner = 1;
    for (size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
    const size_t out_block = axis_total * inner;
    size_t offset = 0;
    T* ov = out.value().data();
    for (const auto& p : parts) {
      const size_t blk = p.extent(axis) * inner;
      const T* pv = p.value().data();
      for (size_t o = 0; o < outer; ++o) {
        std::memcpy(ov + o * out_block + offset, pv + o * blk, blk * sizeof(T));
      }
      offset += blk;
    }
    std::vector<const void*> ids;
    for (const auto& p : parts) ids.push_back(p.id());
    finish_ids("concat", std::move(ids), any_requires(parts), out,
               [parts, out, outer, out_block]() {
                 const T* g = out.storage()->grad.data();
                 size_t offset = 0;
                 for (const auto& p : parts) {
                   const size_t pblk = p.numel() / outer;
                   if (p.requires_grad()) {
                     p.ensure_grad();
                     T* dp = p.storage()->grad.data();
                     for (size_t o = 0; o < outer; ++o) {
                       const T* src = g + o * out_block + offset;
                       T* dst = dp + o * pblk;
                       for (size_t i = 0; i < pblk; ++i) dst[i] += src[i];
                     }
                   }
                   offset += pblk;
                 }
               });
    return out;
  }

  Tensor<T> slice(const Tensor<T>& x, const std::vector<size_t>& starts,
                  const std::vector<size_t>& sizes) {
    if (starts.size() != x.rank() || sizes.size() != x.rank()) {
      throw ShapeError("slice: starts/sizes must match tensor rank");
    }
    for (size_t i = 0; i < x.rank(); ++i) {
      if (sizes[i] == 0 || starts[i] + sizes[i] > x.extent(i)) {
        throw ShapeError(cat("slice: window [", starts[i], ", ", starts[i] + sizes[i],
                             ") out of range for axis ", i, " of ", shape_str(x.shape())));
      }
    }
    Tensor<T> out = Tensor<T>::zeros(Shape(sizes));
    auto in_strides = detail::row_major_strides(x.shape());
    const size_t last = x.rank() - 1;
    const size_t run = sizes[last];
    size_t blocks = out.numel() / run;
    const T* xv = x.value().data();
    T* ov = out.value().data();
    std::vector<size_t> coord(x.rank(), 0);
    auto offsets = std::make_shared<std::vector<size_t>>();
    offsets->reserve(blocks);
    for (size_t blk = 0; blk < blocks; ++blk) {
      size_t base = starts[last];
      for (size_t i = 0; i < last; ++i) base += (starts[i] + coord[i]) * in_strides[i];
      offsets->push_back(base);
      std::memcpy(ov + blk * run, xv + base, run * sizeof(T));
      for (size_t i = last; i-- > 0;) {
        if (++coord[i] < sizes[i]) break;
        coord[i] = 0;
      }
    }
    finish("slice", {x}, out, [x, out, offsets, run]() {
      if (!x.requires_grad()) return;
      x.ensure_grad();
      const T* g = out.storage()->grad.data();
      T* dx = x.storage()->grad.data();
      for (size_t blk = 0; blk < offsets->size(); ++blk) {
        const T* src = g + blk * run;
        T* dst = dx + (*offsets)[blk];
        for (size_t i = 0; i < run; ++i) dst[i] += src[i];
      }
    });
    return out;
  }

  Tensor<T> transpose(const Tensor<T>& x, const std::vector<size_t>& perm) {
    if (perm.size() != x.rank()) throw ShapeError("transpose: perm must match rank");
    std::vector<bool> seen(perm.size(), false);
    for (size_t p : perm) {
      if (p >= perm.size() || seen[p]) throw ShapeError("transpose: invalid permutation");
      seen[p] = true;
    }
    Shape out_shape(x.rank());
    for (size_t i = 0; i < x.rank(); ++i) out_shape[i] = x.extent(perm[i]);
    Tensor<T> out = Tensor<T>::zeros(out_shape);
    auto in_strides = detail::row_major_strides(x.shape());
    std::vector<size_t> step(x.rank());
    for (size_t i = 0; i < x.rank(); ++i) step[i] = in_strides[perm[i]];
    const T* xv = x.value().data();
    T* ov = out.value().data();
    const size_t n = x.numel();
    std::vector<size_t> coord(x.rank(), 0);
    size_t src = 0;
    for (size_t i = 0; i < n; ++i) {
      ov[i] = xv[src];
      for (size_t ax = x.rank(); ax-- > 0;) {
        src += step[ax];
        if (++coord[ax] < out_shape[ax]) break;
        coord[ax] = 0;
        src -= step[ax] * out_shape[ax];
      }
    }
    finish("transpose", {x}, out, [x, out, step, out_shape]() {
      if (!x.requires_grad()) return;
      x.ensure_grad();
      const T* g = out.storage()->grad.data();
      T* dx = x.storage()->grad.data();
      const size_t n = out.numel();
      std::vector<size_t> coord(out_shape.size(), 0);
      size_t src = 0;
      for (size_t i = 0; i < n; ++i) {
        dx[src] += g[i];
        for (size_t ax = out_shape.size(); ax-- > 0;) {
          src += step[ax];
          if (++coord[ax] < out_shape[ax]) break;
          coord[ax] = 0;
          src -= step[ax] * out_shape[ax];
        }
      }
    });
    return out;
  }

  Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel()) {
      throw ShapeError(cat("reshape: cannot view ", shape_str(x.shape()), " as ",
                           shape_str(new_shape)));
    }
    Tensor<T> out = Tensor<T>::from(std::move(new_shape), x.value());
    finish("reshape", {x}, out, [x, out]() {
      if (!x.requires_grad()) return;
      x.ensure_grad();
      const T* g = out.storage()->grad.data();
      T* dx = x.storage()->grad.data();
      for (size_t i = 0; i < x.numel(); ++i) dx[i] += g[i];
    });
    return out;
  }

  // Prepend `lead` axes and tile x across them.
  Tensor<T> broadcast_leading(const Tensor<T>& x, const Shape& lead) {
    if (lead.empty()) throw ShapeError("broadcast_leading: no leading extents given");
    Shape out_shape(lead);
    out_shape.insert(out_shape.end(), x.shape().begin(), x.shape().end());
    Tensor<T> out = Tensor<T>::zeros(out_shape);
    const size_t reps = shape_numel(lead);
    const size_t n = x.numel();
    const T* xv = x.value().data();
    T* ov = out.value().data();
    for (size_t r = 0; r < reps; ++r) std::memcpy(ov + r * n, xv, n * sizeof(T));
    finish("broadcast_leading", {x}, out, [x, out, reps, n]() {
      if (!x.requires_grad()) return;
      x.ensure_grad();
      const T* g = out.storage()->grad.data();
      T* dx = x.storage()->grad.data();
      for (size_t r = 0; r < reps; ++r) {
        const T* src = g + r * n;
        for (size_t i = 0; i < n; ++i) dx[i] += src[i];
      }
    });
    return out;
  }

  Tensor<T> index_select(const Tensor<T>& x, size_t axis, const std::vector<size_t>& indices) {
    if (axis >= x.rank()) throw ShapeError("index_select: axis out of range");
    if (indices.empty()) throw ContractError("index_select: empty index list");
    for (size_t idx : indices) {
      if (idx >= x.extent(axis)) {
        throw ShapeError(cat("index_select: index ", idx, " out of range for axis ", axis,
                             " of ", shape_str(x.shape())));
      }
    }
    Shape out_shape(x.shape());
    out_shape[axis] = indices.size();
    size_t outer = 1;
    for (size_t i = 0; i < axis; ++i) outer *= x.extent(i);
    size_t inner = 1;
    for (size_t i = axis + 1; i < x.rank(); ++i) inner *= x.extent(i);
    Tensor<T> out = Tensor<T>::zeros(out_shape);
    const size_t in_block = x.extent(axis) * inner;
    const size_t out_block = indices.size() * inner;
    const T* xv = x.value().data();
    T* ov = out.value().data();
    for (size_t o = 0; o < outer; ++o) {
      for (size_t ii = 0; ii < indices.size(); ++ii) {
        std::memcpy(ov + o * out_block + ii * inner, xv + o * in_block + indices[ii] * inner,
                    inner * sizeof(T));
      }
    }
    finish("index_select", {x}, out, [x, out, indices, outer, inner, in_block, out_block]() {
      if (!x.requires_grad()) return;
      x.ensure_grad();
      const T* g = out.storage()->grad.data();
      T* dx = x.storage()->grad.data();
      for (size_t o = 0; o < outer; ++o) {
        for (size_t ii = 0; ii < indices.size(); ++ii) {
          const T* src = g + o * out_block + ii * inner;
          T* dst = dx + o * in_block + indices[ii] * inner;
          for (size_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
      }
    });
    return out;
  }

  // Gather the entries where mask != 0 into a rank-1 tensor. The mask is
  // plain data (one byte per element), not a differentiable input.
  Tensor<T> masked_select(const Tensor<T>& x, const std::vector<uint8_t>& mask) {
    if (mask.size() != x.numel()) {
      throw ShapeError(cat("masked_select: mask has ", mask.size(), " entries, tensor ",
                           shape_str(x.shape()), " has ", x.numel()));
    }
    auto picked = std::make_shared<std::vector<size_t>>();
    for (size_t i = 0; i < mask.size(); ++i) {
      if (mask[i]) picked->push_back(i);
    }
    if (picked->empty()) throw ContractError("masked_select: empty selection");
    std::vector<T> data(picked->size());
    const T* xv = x.value().data();
    for (size_t i = 0; i < picked->size(); ++i) data[i] = xv[(*picked)[i]];
    Tensor<T> out = Tensor<T>::from({picked->size()}, std::move(data));
    finish("masked_select", {x}, out, [x, out, picked]() {
      if (!x.requires_grad()) return;
      x.ensure_grad();
      const T* g = out.storage()->grad.data();
      T* dx = x.storage()->grad.data();
      for (size_t i = 0; i < picked->size(); ++i) dx[(*picked)[i]] += g[i];
    });
    return out;
  }

  // x: [..., P, pl] patches placed at offsets p*stride, overlap averaged.
  // Positions covered by no patch (possible when stride > pl) stay zero.
  Tensor<T> overlap_add(const Tensor<T>& x, size_t stride) {
    if (x.rank() < 2) throw ShapeError("overlap_add: rank must be >= 2");
    if (stride == 0) throw ContractError("overlap_add: stride must be positive");
    const size_t pl = x.extent(x.rank() - 1);
    const size_t patches = x.extent(x.rank() - 2);
    const size_t out_len = (patches - 1) * stride + pl;
    const size_t batch = x.numel() / (patches * pl);
    auto coverage = std::make_shared<std::vector<T>>(out_len, T{0});
    for (size_t p = 0; p < patches; ++p) {
      for (size_t o = 0; o < pl; ++o) (*coverage)[p * stride + o] += T{1};
    }
    for (auto& c : *coverage) {
      if (c == T{0}) c = T{1};
    }
    Shape out_shape(x.shape());
    out_shape.pop_back();
    out_shape[out_shape.size() - 1] = out_len;
    Tensor<T> out = Tensor<T>::zeros(out_shape);
    const T* xv = x.value().data();
    T* ov = out.value().data();
    for (size_t b = 0; b < batch; ++b) {
      const T* xb = xv + b * patches * pl;
      T* ob = ov + b * out_len;
      for (size_t p = 0; p < patches; ++p) {
        const T* xp = xb + p * pl;
        T* dst = ob + p * stride;
        for (size_t o = 0; o < pl; ++o) dst[o] += xp[o];
      }
      for (size_t t = 0; t < out_len; ++t) ob[t] /= (*coverage)[t];
    }
    finish("overlap_add", {x}, out, [x, out, coverage, stride, pl, patches, out_len, batch]() {
      if (!x.requires_grad()) return;
      x.ensure_grad();
      const T* g = out.storage()->grad.data();
      T* dx = x.storage()->grad.data();
      for (size_t b = 0; b < batch; ++b) {
        const T* gb = g + b * out_len;
        T* dxb = dx + b * patches * pl;
        for (size_t p = 0; p < patches; ++p) {
          T* dxp = dxb + p * pl;
          const T* src = gb + p * stride;
          const T* cov = coverage->data() + p * stride;
          for (size_t o = 0; o < pl; ++o) dxp[o] += src[o] / cov[o];
        }
      }
    });
    return out;
  }

  // Inverted dropout; identity when rate <= 0.
  Tensor<T> dropout(const Tensor<T>& x, double rate, Rng& rng) {
    if (rate <= 0.0) return x;
    if (rate >= 1.0) throw ContractError("dropout: rate must be in [0, 1)");
    auto mask = std::make_shared<std::vector<T>>(x.numel());
    const double keep_scale = 1.0 / (1.0 - rate);
    for (auto& m : *mask) m = rng.uniform() < rate ? T{0} : static_cast<T>(keep_scale);
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* xv = x.value().data();
    T* ov = out.value().data();
    for (size_t i = 0; i < x.numel(); ++i) ov[i] = xv[i] * (*mask)[i];
    finish("dropout", {x}, out, [x, out, mask]() {
      if (!x.requires_grad()) return;
      x.ensure_grad();
      const T* g = out.storage()->grad.data();
      T* dx = x.storage()->grad.data();
      for (size_t i = 0; i < x.numel(); ++i) dx[i] += g[i] * (*mask)[i];
    });
    return out;
  }

  // ---- backward ------------------------------------------------------------

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse. Gradients
  // accumulate additively, so a tensor feeding several consumers collects
  // every contribution.
  void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) {
      throw ContractError("backward: loss must be scalar, got shape " +
                          shape_str(loss.shape()));
    }
    if (nodes_.empty()) throw ContractError("backward: tape is empty");
    if (!loss.requires_grad()) {
      throw ContractError("backward: loss does not depend on any differentiable input");
    }
    loss.ensure_grad();
    loss.storage()->grad[0] = T{1};
    last_backward_visits_ = 0;
    for (size_t i = nodes_.size(); i-- > 0;) {
      ++last_backward_visits_;
      const Node& node = nodes_[i];
      // Nodes whose output never received a gradient contribute nothing.
      if (static_cast<const TensorStorage<T>*>(node.output)->grad.empty()) continue;
      node.backward();
    }
  }

 private:
  static void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
      throw ShapeError(cat(op, ": shape mismatch ", shape_str(a.shape()), " vs ",
                           shape_str(b.shape())));
    }
  }

  static bool any_requires(const std::vector<Tensor<T>>& ts) {
    for (const auto& t : ts) {
      if (t.requires_grad()) return true;
    }
    return false;
  }

  void finish(const char* op, std::initializer_list<Tensor<T>> inputs, Tensor<T>& out,
              std::function<void()> backward_fn) {
    bool needs = false;
    std::vector<const void*> ids;
    ids.reserve(inputs.size());
    for (const auto& t : inputs) {
      needs = needs || t.requires_grad();
      ids.push_back(t.id());
    }
    finish_ids(op, std::move(ids), needs, out, std::move(backward_fn));
  }

  void finish_ids(const char* op, std::vector<const void*> ids, bool needs, Tensor<T>& out,
                  std::function<void()> backward_fn) {
    if (validate_finite) {
      for (T v : out.value()) {
        if (!std::isfinite(static_cast<double>(v))) {
          throw ContractError(cat(op, ": non-finite value in output"));
        }
      }
    }
    if (!recording || !needs) return;
    out.set_requires_grad(true);
    nodes_.push_back(Node{op, std::move(ids), out.id(), std::move(backward_fn)});
  }

  std::vector<Node> nodes_;
  uint64_t matmul_multiplies_ = 0;
  size_t last_backward_visits_ = 0;
};

// Central-difference gradient: (f(x + h e_i) - f(x - h e_i)) / (2h) per
// element. f() reads x's current contents; x is restored before returning.
template <typename T, typename F>
std::vector<double> finite_diff_grad(F&& f, Tensor<T>& x, double h) {
  if (!(h > 0.0)) throw ContractError("finite_diff_grad: h must be positive");
  std::vector<double> grad(x.numel());
  auto& data = x.value();
  for (size_t i = 0; i < data.size(); ++i) {
    const T saved = data[i];
    data[i] = static_cast<T>(static_cast<double>(saved) + h);
    const double fp = static_cast<double>(f());
    data[i] = static_cast<T>(static_cast<double>(saved) - h);
    const double fm = static_cast<double>(f());
    data[i] = saved;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

}  // namespace fsgpt
