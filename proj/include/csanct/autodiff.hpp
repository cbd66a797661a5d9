#pragma once

// Dense row-major tensors with a reverse-mode gradient tape.
//
// Every op records its inputs and a backward closure on the result node.
// Nodes carry a creation sequence number, so the execution order of the
// forward pass is recoverable from the graph alone and backward() can replay
// it in reverse. Broadcasting is limited to bias addition over leading axes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "csanct/error.hpp"

namespace csanct {

using Real = double;
using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

class Tensor;

namespace detail {

struct Node {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), Real{0});
  }
};

inline std::uint64_t next_seq() {
  thread_local std::uint64_t counter = 0;
  return ++counter;
}

inline int& no_grad_depth() {
  thread_local int depth = 0;
  return depth;
}

}  // namespace detail

inline bool grad_enabled() { return detail::no_grad_depth() == 0; }

/// Disables graph recording for its lifetime (inference, oracles).
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth(); }
  ~NoGradGuard() { --detail::no_grad_depth(); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<Real> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                           std::to_string(data.size()) + " values");
    }
    for (auto d : shape) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
    node_->seq = detail::next_seq();
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<Real>(n, Real{0}), requires_grad);
  }

  static Tensor full(Shape shape, Real value, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<Real>(n, value), requires_grad);
  }

  static Tensor scalar(Real value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->data.size(); }

  std::span<const Real> data() const { return node_->data; }
  /// Direct write access; only valid on leaves outside a recorded graph.
  std::span<Real> mutable_data() { return node_->data; }

  Real item() const {
    if (size() != 1) throw UsageError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->data[0];
  }
  Real at(std::size_t i) const { return node_->data.at(i); }
  Real at(std::size_t r, std::size_t c) const { return node_->data.at(r * node_->shape.back() + c); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  std::span<const Real> grad() const { return node_->grad; }
  std::span<Real> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }
  bool is_leaf() const { return !node_->backward_fn; }

  /// Copy of the values as a fresh leaf, detached from any graph.
  Tensor detach(bool requires_grad = false) const { return Tensor(shape(), node_->data, requires_grad); }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline Tensor make_op(Shape shape, std::vector<Real> data, std::initializer_list<const Tensor*> inputs,
                      std::function<void(Node&)> backward_fn) {
  Tensor out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto* t : inputs) any = any || t->requires_grad();
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  for (const auto* t : inputs) node.inputs.push_back(t->node());
  node.backward_fn = std::move(backward_fn);
  return out;
}

inline Tensor make_op_n(Shape shape, std::vector<Real> data, const std::vector<Tensor>& inputs,
                        std::function<void(Node&)> backward_fn) {
  Tensor out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  for (const auto& t : inputs) node.inputs.push_back(t.node());
  node.backward_fn = std::move(backward_fn);
  return out;
}

// Calls fn(grad_buffer) on input i when it participates in differentiation.
template <class Fn>
inline void accumulate(Node& self, std::size_t i, Fn&& fn) {
  auto& in = *self.inputs[i];
  if (!in.requires_grad) return;
  in.ensure_grad();
  fn(in.grad);
}

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<Real> out(a.size());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return detail::make_op(a.shape(), std::move(out), {&a, &b}, [](detail::Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      detail::accumulate(self, k, [&](std::vector<Real>& g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      });
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<Real> out(a.size());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return detail::make_op(a.shape(), std::move(out), {&a, &b}, [](detail::Node& self) {
    detail::accumulate(self, 0, [&](std::vector<Real>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
    detail::accumulate(self, 1, [&](std::vector<Real>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    });
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<Real> out(a.size());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return detail::make_op(a.shape(), std::move(out), {&a, &b}, [](detail::Node& self) {
    const auto& xa = self.inputs[0]->data;
    const auto& xb = self.inputs[1]->data;
    detail::accumulate(self, 0, [&](std::vector<Real>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * xb[i];
    });
    detail::accumulate(self, 1, [&](std::vector<Real>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * xa[i];
    });
  });
}

inline Tensor scale(const Tensor& a, Real c) {
  std::vector<Real> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= c;
  return detail::make_op(a.shape(), std::move(out), {&a}, [c](detail::Node& self) {
    detail::accumulate(self, 0, [&](std::vector<Real>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * self.grad[i];
    });
  });
}

inline Tensor relu(const Tensor& a) {
  std::vector<Real> out(a.size());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0 ? x[i] : Real{0};
  return detail::make_op(a.shape(), std::move(out), {&a}, [](detail::Node& self) {
    const auto& x = self.inputs[0]->data;
    detail::accumulate(self, 0, [&](std::vector<Real>& g) {
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] > 0) g[i] += self.grad[i];
    });
  });
}

// tanh approximation of GELU.
inline Tensor gelu(const Tensor& a) {
  constexpr Real k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr Real c = 0.044715;
  std::vector<Real> out(a.size());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    Real v = x[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(k * (v + c * v * v * v)));
  }
  return detail::make_op(a.shape(), std::move(out), {&a}, [](detail::Node& self) {
    const auto& x = self.inputs[0]->data;
    detail::accumulate(self, 0, [&](std::vector<Real>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        Real v = x[i];
        Real t = std::tanh(k * (v + c * v * v * v));
        Real dt = (1.0 - t * t) * k * (1.0 + 3.0 * c * v * v);
        g[i] += self.grad[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
      }
    });
  });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<Real> out(a.data().begin(), a.data().end());
  return detail::make_op(std::move(shape), std::move(out), {&a}, [](detail::Node& self) {
    detail::accumulate(self, 0, [&](std::vector<Real>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a) {
  auto x = a.data();
  Real s = std::accumulate(x.begin(), x.end(), Real{0});
  return detail::make_op({1}, {s}, {&a}, [](detail::Node& self) {
    detail::accumulate(self, 0, [&](std::vector<Real>& g) {
      for (auto& v : g) v += self.grad[0];
    });
  });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), Real{1} / static_cast<Real>(a.size())); }

/// Scalar element `index` of a flat tensor.
inline Tensor pick(const Tensor& a, std::size_t index) {
  if (index >= a.size()) throw IndexError("pick: index " + std::to_string(index) + " out of range");
  return detail::make_op({1}, {a.data()[index]}, {&a}, [index](detail::Node& self) {
    detail::accumulate(self, 0, [&](std::vector<Real>& g) { g[index] += self.grad[0]; });
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<Real> out(m * n, Real{0});
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = x[i * k + p];
      if (av == 0) continue;
      const Real* brow = &y[p * n];
      Real* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return detail::make_op({m, n}, std::move(out), {&a, &b}, [m, k, n](detail::Node& self) {
    const auto& x = self.inputs[0]->data;
    const auto& y = self.inputs[1]->data;
    const auto& go = self.grad;
    detail::accumulate(self, 0, [&](std::vector<Real>& g) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          Real s = 0;
          for (std::size_t j = 0; j < n; ++j) s += go[i * n + j] * y[p * n + j];
          g[i * k + p] += s;
        }
    });
    detail::accumulate(self, 1, [&](std::vector<Real>& g) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const Real av = x[i * k + p];
          if (av == 0) continue;
          for (std::size_t j = 0; j < n; ++j) g[p * n + j] += av * go[i * n + j];
        }
    });
  });
}

/// a · bᵀ for a[m×k], b[n×k]; the layout of every weight matrix W[out×in].
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw DimensionError("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<Real> out(m * n);
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      Real s = 0;
      const Real* ar = &x[i * k];
      const Real* br = &y[j * k];
      for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
      out[i * n + j] = s;
    }
  return detail::make_op({m, n}, std::move(out), {&a, &b}, [m, k, n](detail::Node& self) {
    const auto& x = self.inputs[0]->data;
    const auto& y = self.inputs[1]->data;
    const auto& go = self.grad;
    detail::accumulate(self, 0, [&](std::vector<Real>& g) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const Real gv = go[i * n + j];
          if (gv == 0) continue;
          for (std::size_t p = 0; p < k; ++p) g[i * k + p] += gv * y[j * k + p];
        }
    });
    detail::accumulate(self, 1, [&](std::vector<Real>& g) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const Real gv = go[i * n + j];
          if (gv == 0) continue;
          for (std::size_t p = 0; p < k; ++p) g[j * k + p] += gv * x[i * k + p];
        }
    });
  });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<Real> out(a.size());
  auto x = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return detail::make_op({c, r}, std::move(out), {&a}, [r, c](detail::Node& self) {
    detail::accumulate(self, 0, [&](std::vector<Real>& g) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
    });
  });
}

/// x + b with b broadcast over every leading axis of x.
inline Tensor add_bias(const Tensor& x, const Tensor& b) {
  if (b.rank() != 1 || x.shape().back() != b.dim(0)) {
    throw DimensionError("add_bias: bias " + shape_str(b.shape()) + " does not match trailing axis of " +
                         shape_str(x.shape()));
  }
  const std::size_t n = b.dim(0);
  std::vector<Real> out(x.data().begin(), x.data().end());
  auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % n];
  return detail::make_op(x.shape(), std::move(out), {&x, &b}, [n](detail::Node& self) {
    detail::accumulate(self, 0, [&](std::vector<Real>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
    detail::accumulate(self, 1, [&](std::vector<Real>& g) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % n] += self.grad[i];
    });
  });
}

/// x · Wᵀ + b for x[m×in], W[out×in], b[out].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_bias(matmul_nt(x, w), b);
}

// ---------------------------------------------------------------------------
// Normalisation

inline Tensor softmax(const Tensor& x, int axis = -1) {
  const int rank = static_cast<int>(x.rank());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw DimensionError("softmax: axis out of range for " + shape_str(x.shape()));
  std::size_t outer = 1, inner = 1;
  const std::size_t n = x.dim(static_cast<std::size_t>(axis));
  for (int i = 0; i < axis; ++i) outer *= x.dim(static_cast<std::size_t>(i));
  for (int i = axis + 1; i < rank; ++i) inner *= x.dim(static_cast<std::size_t>(i));
  auto in = x.data();
  std::vector<Real> out(x.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t s = 0; s < inner; ++s) {
      const std::size_t base = o * n * inner + s;
      Real mx = -std::numeric_limits<Real>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        const Real v = in[base + j * inner];
        if (std::isnan(v)) throw NumericError("softmax: NaN input");
        mx = std::max(mx, v);
      }
      if (!std::isfinite(mx)) throw NumericError("softmax: slice has no finite entry");
      Real z = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const Real e = std::exp(in[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= z;
    }
  return detail::make_op(x.shape(), std::move(out), {&x}, [outer, inner, n](detail::Node& self) {
    const auto& y = self.data;
    const auto& go = self.grad;
    detail::accumulate(self, 0, [&](std::vector<Real>& g) {
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t s = 0; s < inner; ++s) {
          const std::size_t base = o * n * inner + s;
          Real dot = 0;
          for (std::size_t j = 0; j < n; ++j) dot += go[base + j * inner] * y[base + j * inner];
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t i = base + j * inner;
            g[i] += y[i] * (go[i] - dot);
          }
        }
    });
  });
}

/// Log-softmax over the last axis.
inline Tensor log_softmax(const Tensor& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.size() / n;
  auto in = x.data();
  std::vector<Real> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* row = &in[r * n];
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (std::isnan(row[j])) throw NumericError("log_softmax: NaN input");
      mx = std::max(mx, row[j]);
    }
    if (!std::isfinite(mx)) throw NumericError("log_softmax: row has no finite entry");
    Real z = 0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    const Real lz = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = row[j] - lz;
  }
  return detail::make_op(x.shape(), std::move(out), {&x}, [rows, n](detail::Node& self) {
    const auto& y = self.data;
    const auto& go = self.grad;
    detail::accumulate(self, 0, [&](std::vector<Real>& g) {
      for (std::size_t r = 0; r < rows; ++r) {
        Real s = 0;
        for (std::size_t j = 0; j < n; ++j) s += go[r * n + j];
        for (std::size_t j = 0; j < n; ++j) g[r * n + j] += go[r * n + j] - std::exp(y[r * n + j]) * s;
      }
    });
  });
}

/// Per-position normalisation over the last axis followed by gain/bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps) {
  if (!(eps > 0)) throw ConfigError("layer_norm: eps must be positive");
  const std::size_t n = x.shape().back();
  if (gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != n || bias.dim(0) != n) {
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()) +
                         " do not match " + shape_str(x.shape()));
  }
  const std::size_t rows = x.size() / n;
  auto in = x.data();
  auto gv = gain.data(), bv = bias.data();
  std::vector<Real> out(x.size());
  std::vector<Real> xhat(x.size());
  std::vector<Real> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* row = &in[r * n];
    Real mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<Real>(n);
    Real var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<Real>(n);
    inv_std[r] = Real{1} / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (row[j] - mu) * inv_std[r];
      out[r * n + j] = gv[j] * xhat[r * n + j] + bv[j];
    }
  }
  return detail::make_op(
      x.shape(), std::move(out), {&x, &gain, &bias},
      [rows, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
        const auto& go = self.grad;
        const auto& gv = self.inputs[1]->data;
        detail::accumulate(self, 0, [&](std::vector<Real>& g) {
          std::vector<Real> dxhat(n);
          for (std::size_t r = 0; r < rows; ++r) {
            Real s1 = 0, s2 = 0;
            for (std::size_t j = 0; j < n; ++j) {
              dxhat[j] = go[r * n + j] * gv[j];
              s1 += dxhat[j];
              s2 += dxhat[j] * xhat[r * n + j];
            }
            const Real scale_r = inv_std[r] / static_cast<Real>(n);
            for (std::size_t j = 0; j < n; ++j) {
              g[r * n + j] +=
                  scale_r * (static_cast<Real>(n) * dxhat[j] - s1 - xhat[r * n + j] * s2);
            }
          }
        });
        detail::accumulate(self, 1, [&](std::vector<Real>& g) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) g[j] += go[r * n + j] * xhat[r * n + j];
        });
        detail::accumulate(self, 2, [&](std::vector<Real>& g) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) g[j] += go[r * n + j];
        });
      });
}

// ---------------------------------------------------------------------------
// Indexing and assembly

/// Row lookup table[ids[i]] for a table[V×d].
inline Tensor embedding(const Tensor& table, std::span<const int> ids) {
  detail::require_rank(table, 2, "embedding");
  if (ids.empty()) throw DimensionError("embedding: empty id list");
  const std::size_t rows = table.dim(0), d = table.dim(1);
  std::vector<int> idx(ids.begin(), ids.end());
  std::vector<Real> out(idx.size() * d);
  auto tv = table.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= rows) {
      throw IndexError("embedding: id " + std::to_string(idx[i]) + " outside table of " +
                       std::to_string(rows) + " rows");
    }
    std::copy_n(&tv[static_cast<std::size_t>(idx[i]) * d], d, &out[i * d]);
  }
  return detail::make_op({idx.size(), d}, std::move(out), {&table}, [idx, d](detail::Node& self) {
    detail::accumulate(self, 0, [&](std::vector<Real>& g) {
      for (std::size_t i = 0; i < idx.size(); ++i) {
        Real* dst = &g[static_cast<std::size_t>(idx[i]) * d];
        for (std::size_t j = 0; j < d; ++j) dst[j] += self.grad[i * d + j];
      }
    });
  });
}

/// Rows [begin, end) of a rank-2 tensor.
inline Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  detail::require_rank(x, 2, "slice_rows");
  if (begin >= end || end > x.dim(0)) {
    throw IndexError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) + ") outside " +
                     shape_str(x.shape()));
  }
  const std::size_t c = x.dim(1);
  std::vector<Real> out(x.data().begin() + static_cast<std::ptrdiff_t>(begin * c),
                        x.data().begin() + static_cast<std::ptrdiff_t>(end * c));
  return detail::make_op({end - begin, c}, std::move(out), {&x}, [begin, c](detail::Node& self) {
    detail::accumulate(self, 0, [&](std::vector<Real>& g) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * c + i] += self.grad[i];
    });
  });
}

/// Columns [begin, end) of a rank-2 tensor.
inline Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  detail::require_rank(x, 2, "slice_cols");
  if (begin >= end || end > x.dim(1)) {
    throw IndexError("slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) + ") outside " +
                     shape_str(x.shape()));
  }
  const std::size_t r = x.dim(0), c = x.dim(1), w = end - begin;
  std::vector<Real> out(r * w);
  auto in = x.data();
  for (std::size_t i = 0; i < r; ++i) std::copy_n(&in[i * c + begin], w, &out[i * w]);
  return detail::make_op({r, w}, std::move(out), {&x}, [r, c, w, begin](detail::Node& self) {
    detail::accumulate(self, 0, [&](std::vector<Real>& g) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) g[i * c + begin + j] += self.grad[i * w + j];
    });
  });
}

/// Stacks rank-2 tensors with equal column counts.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t c = parts.front().shape().back();
  std::size_t rows = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    detail::require_rank(p, 2, "concat_rows");
    if (p.dim(1) != c) {
      throw DimensionError("concat_rows: column mismatch " + shape_str(parts.front().shape()) + " vs " +
                           shape_str(p.shape()));
    }
    offsets.push_back(rows * c);
    rows += p.dim(0);
  }
  std::vector<Real> out;
  out.reserve(rows * c);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return detail::make_op_n({rows, c}, std::move(out), parts, [offsets](detail::Node& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      detail::accumulate(self, k, [&](std::vector<Real>& g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offsets[k] + i];
      });
    }
  });
}

/// Places rank-2 tensors with equal row counts side by side.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t r = parts.front().dim(0);
  std::size_t total = 0;
  std::vector<std::size_t> widths, starts;
  for (const auto& p : parts) {
    detail::require_rank(p, 2, "concat_cols");
    if (p.dim(0) != r) {
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts.front().shape()) + " vs " +
                           shape_str(p.shape()));
    }
    starts.push_back(total);
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<Real> out(r * total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto in = parts[k].data();
    for (std::size_t i = 0; i < r; ++i) std::copy_n(&in[i * widths[k]], widths[k], &out[i * total + starts[k]]);
  }
  return detail::make_op_n({r, total}, std::move(out), parts, [r, total, widths, starts](detail::Node& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      detail::accumulate(self, k, [&](std::vector<Real>& g) {
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += self.grad[i * total + starts[k] + j];
      });
    }
  });
}

/// Joins rank-1 tensors end to end.
inline Tensor concat(const std::vector<Tensor>& parts) {
  std::vector<Tensor> rows;
  rows.reserve(parts.size());
  for (const auto& p : parts) {
    detail::require_rank(p, 1, "concat");
    rows.push_back(reshape(p, {1, p.dim(0)}));
  }
  auto joined = concat_cols(rows);
  return reshape(joined, {joined.dim(1)});
}

/// Row i of a rank-2 tensor as a rank-1 tensor.
inline Tensor row(const Tensor& x, std::size_t i) {
  auto r = slice_rows(x, i, i + 1);
  return reshape(r, {x.dim(1)});
}

/// Arithmetic mean of rows [begin, end) as a rank-1 tensor.
inline Tensor mean_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  detail::require_rank(x, 2, "mean_rows");
  if (begin >= end || end > x.dim(0)) {
    throw IndexError("mean_rows: empty or out-of-range span [" + std::to_string(begin) + "," +
                     std::to_string(end) + ")");
  }
  const std::size_t c = x.dim(1);
  const Real inv = Real{1} / static_cast<Real>(end - begin);
  std::vector<Real> out(c, Real{0});
  auto in = x.data();
  for (std::size_t i = begin; i < end; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += in[i * c + j];
  for (auto& v : out) v *= inv;
  return detail::make_op({c}, std::move(out), {&x}, [begin, end, c, inv](detail::Node& self) {
    detail::accumulate(self, 0, [&](std::vector<Real>& g) {
      for (std::size_t i = begin; i < end; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += inv * self.grad[j];
    });
  });
}

/// Sets entries whose `visible` flag is zero to -inf (additive attention mask).
inline Tensor apply_mask(const Tensor& scores, const std::vector<std::uint8_t>& visible) {
  if (visible.size() != scores.size()) {
    throw DimensionError("apply_mask: mask of " + std::to_string(visible.size()) + " entries for scores " +
                         shape_str(scores.shape()));
  }
  std::vector<Real> out(scores.data().begin(), scores.data().end());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!visible[i]) out[i] = -std::numeric_limits<Real>::infinity();
  return detail::make_op(scores.shape(), std::move(out), {&scores}, [visible](detail::Node& self) {
    detail::accumulate(self, 0, [&](std::vector<Real>& g) {
      for (std::size_t i = 0; i < g.size(); ++i)
        if (visible[i]) g[i] += self.grad[i];
    });
  });
}

/// Inverted dropout; identity when rate is zero or no generator is supplied.
inline Tensor dropout(const Tensor& x, Real rate, std::mt19937_64* rng) {
  if (rate < 0 || rate >= 1) throw ConfigError("dropout rate must lie in [0,1)");
  if (rate == 0 || rng == nullptr) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  const Real s = Real{1} / (Real{1} - rate);
  std::vector<Real> factor(x.size());
  for (auto& f : factor) f = keep(*rng) ? s : Real{0};
  std::vector<Real> out(x.size());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * factor[i];
  return detail::make_op(x.shape(), std::move(out), {&x}, [factor = std::move(factor)](detail::Node& self) {
    detail::accumulate(self, 0, [&](std::vector<Real>& g) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor[i];
    });
  });
}

// ---------------------------------------------------------------------------
// Losses

struct SmoothedCrossEntropy {
  Tensor loss;
  std::size_t counted = 0;  // non-pad positions
  bool all_pad() const { return counted == 0; }
};

/// Label-smoothed cross-entropy averaged over non-pad positions.
///
/// The smoothed target puts 1-ε on the gold class plus ε/|V| on every class,
/// and each position contributes -Σ_c q_c log p_c. A negative pad_id disables
/// padding. An all-pad target yields a zero loss with all_pad() set.
inline SmoothedCrossEntropy cross_entropy_label_smoothed(const Tensor& logits, std::span<const int> targets,
                                                         Real smoothing, int pad_id) {
  detail::require_rank(logits, 2, "cross_entropy_label_smoothed");
  if (!(smoothing >= 0 && smoothing < 1)) throw ConfigError("label smoothing must lie in [0,1)");
  const std::size_t rows = logits.dim(0), v = logits.dim(1);
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy_label_smoothed: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_str(logits.shape()));
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  for (int t : tgt) {
    if (t < 0 || static_cast<std::size_t>(t) >= v) {
      throw IndexError("cross_entropy_label_smoothed: target " + std::to_string(t) + " outside vocabulary of " +
                       std::to_string(v));
    }
  }
  std::size_t counted = 0;
  for (int t : tgt)
    if (t != pad_id) ++counted;
  if (counted == 0) return {Tensor::scalar(0), 0};

  auto in = logits.data();
  const Real uniform = smoothing / static_cast<Real>(v);
  std::vector<Real> probs(rows * v, Real{0});
  Real total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (tgt[r] == pad_id) continue;
    const Real* row = &in[r * v];
    Real mx = -std::numeric_limits<Real>::infinity();
    for (std::size_t j = 0; j < v; ++j) {
      if (std::isnan(row[j])) throw NumericError("cross_entropy_label_smoothed: NaN logit");
      mx = std::max(mx, row[j]);
    }
    Real z = 0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    const Real lz = mx + std::log(z);
    Real sum_logp = 0;
    for (std::size_t j = 0; j < v; ++j) {
      const Real lp = row[j] - lz;
      sum_logp += lp;
      probs[r * v + j] = std::exp(lp);
    }
    total += -(Real{1} - smoothing) * (row[tgt[r]] - lz) - uniform * sum_logp;
  }
  const Real inv = Real{1} / static_cast<Real>(counted);
  auto loss = detail::make_op(
      {1}, {total * inv}, {&logits},
      [rows, v, inv, smoothing, uniform, pad_id, tgt, probs = std::move(probs)](detail::Node& self) {
        detail::accumulate(self, 0, [&](std::vector<Real>& g) {
          const Real go = self.grad[0] * inv;
          for (std::size_t r = 0; r < rows; ++r) {
            if (tgt[r] == pad_id) continue;
            for (std::size_t j = 0; j < v; ++j) {
              Real q = uniform + (static_cast<int>(j) == tgt[r] ? Real{1} - smoothing : Real{0});
              g[r * v + j] += go * (probs[r * v + j] - q);
            }
          }
        });
      });
  return {loss, counted};
}

// ---------------------------------------------------------------------------
// Backward pass

enum class BackwardOrder {
  reverse_execution,  // descending creation sequence
  reverse_postorder,  // reverse of a depth-first post-order walk
};

/// The recorded operations reachable from a root, in a replayable order.
class Tape {
 public:
  explicit Tape(const Tensor& root, BackwardOrder order = BackwardOrder::reverse_execution) {
    if (!root.defined()) throw UsageError("backward: undefined root");
    if (!root.node()->requires_grad) return;
    // Iterative DFS producing a post-order (inputs before consumers).
    std::unordered_set<const detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        detail::Node* child = node->inputs[next++].get();
        if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      } else {
        nodes_.push_back(node);
        stack.pop_back();
      }
    }
    if (order == BackwardOrder::reverse_execution) {
      std::sort(nodes_.begin(), nodes_.end(),
                [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });
    } else {
      std::reverse(nodes_.begin(), nodes_.end());
    }
  }

  std::size_t size() const { return nodes_.size(); }

  void replay(detail::Node& root) {
    for (auto* n : nodes_)
      if (n->backward_fn) n->grad.assign(n->data.size(), Real{0});
    root.ensure_grad();
    root.grad[0] += Real{1};
    for (auto* n : nodes_)
      if (n->backward_fn) n->backward_fn(*n);
  }

 private:
  std::vector<detail::Node*> nodes_;
};

/// Populates grad on every requires_grad ancestor of a scalar loss.
/// Leaf gradients accumulate across calls; intermediate buffers are reset.
inline void backward(const Tensor& loss, BackwardOrder order = BackwardOrder::reverse_execution) {
  if (!loss.defined()) throw UsageError("backward: undefined root");
  if (loss.size() != 1) throw UsageError("backward: root must be a scalar, got " + shape_str(loss.shape()));
  Tape tape(loss, order);
  if (tape.size() == 0) return;
  tape.replay(*loss.node());
}

}  // namespace csanct
