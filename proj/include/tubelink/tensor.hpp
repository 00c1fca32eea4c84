#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tubelink/error.hpp"

namespace tubelink {

using Shape = std::vector<std::size_t>;

// Additive attention-mask value for blocked positions. Finite so that
// gradients through masked softmax never see inf - inf.
inline constexpr double kMaskedLogit = -1e9;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

class Tensor;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

// Dense row-major double tensor. Copies share the underlying node; results of
// operations on tensors that require gradients record how to backpropagate.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (values.size() != shape_size(shape)) {
      throw ShapeError("Tensor: " + std::to_string(values.size()) + " values for shape " + shape_string(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor full(Shape shape, double v) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }
  static Tensor scalar(double v, bool requires_grad = false) { return Tensor({1}, {v}, requires_grad); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  bool has_grad() const { return node_->grad.size() == node_->value.size() && !node_->value.empty(); }

  double item() const {
    if (size() != 1) throw ShapeError("Tensor::item on non-scalar " + shape_string(shape()));
    return node_->value[0];
  }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * node_->shape.back() + c]; }

  void zero_grad() const { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }
  void clear_grad() const { node_->grad.clear(); }

  // Same values, no history.
  Tensor detach() const { return Tensor(node_->shape, node_->value, false); }

  // Reverse-mode sweep from a scalar. A graph can be swept once.
  void backward() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  static Tensor from_node(std::shared_ptr<detail::Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

// Disables graph recording on this thread for its lifetime (inference).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

inline Tensor make_result(Shape shape, std::vector<double> value, std::initializer_list<const Tensor*> inputs,
                          std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (!grad_mode()) return Tensor::from_node(std::move(node));
  for (const Tensor* in : inputs) {
    if (in->requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    for (const Tensor* in : inputs) node->parents.push_back(in->node_ptr());
    node->backward_fn = std::move(fn);
  }
  return Tensor::from_node(std::move(node));
}

inline Tensor make_result(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs,
                          std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (!grad_mode()) return Tensor::from_node(std::move(node));
  for (const auto& in : inputs) {
    if (in.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    for (const auto& in : inputs) node->parents.push_back(in.node_ptr());
    node->backward_fn = std::move(fn);
  }
  return Tensor::from_node(std::move(node));
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

inline void require_matrix(const Tensor& t, const char* op) {
  require(t.rank() == 2, std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

}  // namespace detail

inline void Tensor::backward() const {
  if (size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_string(shape()));
  if (node_->consumed) throw Error("backward: graph already swept; rebuild the forward pass");
  node_->consumed = true;
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(*n);
  }
  // Interior gradients are no longer needed; leaves keep theirs.
  for (detail::Node* n : order) {
    if (n->backward_fn) std::vector<double>().swap(n->grad);
  }
}

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require(a.shape() == b.shape(), "add: shape mismatch " + shape_string(a.shape()) + " vs " +
                                              shape_string(b.shape()));
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  auto* pa = a.node();
  auto* pb = b.node();
  return detail::make_result(a.shape(), std::move(out), {&a, &b}, [pa, pb](detail::Node& self) {
    for (auto* p : {pa, pb}) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require(a.shape() == b.shape(), "sub: shape mismatch");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  auto* pa = a.node();
  auto* pb = b.node();
  return detail::make_result(a.shape(), std::move(out), {&a, &b}, [pa, pb](detail::Node& self) {
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require(a.shape() == b.shape(), "mul: shape mismatch");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  auto* pa = a.node();
  auto* pb = b.node();
  return detail::make_result(a.shape(), std::move(out), {&a, &b}, [pa, pb](detail::Node& self) {
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa->value[i];
    }
  });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  detail::require(a.shape() == b.shape(), "div: shape mismatch");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] / b[i];
  auto* pa = a.node();
  auto* pb = b.node();
  return detail::make_result(a.shape(), std::move(out), {&a, &b}, [pa, pb](detail::Node& self) {
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / pb->value[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] -= self.grad[i] * self.value[i] / pb->value[i];
      }
    }
  });
}

inline Tensor mul_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  auto* pa = a.node();
  return detail::make_result(a.shape(), std::move(out), {&a}, [pa, s](detail::Node& self) {
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + s;
  auto* pa = a.node();
  return detail::make_result(a.shape(), std::move(out), {&a}, [pa](detail::Node& self) {
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

namespace detail {

// y = f(x) elementwise with dy/dx expressed through (x, y).
template <typename F, typename D>
Tensor unary(const Tensor& a, F f, D dfdx) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i]);
  auto* pa = a.node();
  return make_result(a.shape(), std::move(out), {&a}, [pa, dfdx](Node& self) {
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfdx(pa->value[i], self.value[i]);
  });
}

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

inline Tensor relu(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(a, detail::stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Tensor sqrt(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

inline Tensor square(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  auto* pa = a.node();
  return detail::make_result({1}, {s}, {&a}, [pa](detail::Node& self) {
    auto& g = pa->ensure_grad();
    for (double& v : g) v += self.grad[0];
  });
}

inline Tensor mean(const Tensor& a) { return mul_scalar(sum(a), 1.0 / static_cast<double>(a.size())); }

inline Tensor reshape(const Tensor& a, Shape shape) {
  detail::require(shape_size(shape) == a.size(), "reshape: size mismatch");
  std::vector<double> out(a.values().begin(), a.values().end());
  auto* pa = a.node();
  return detail::make_result(std::move(shape), std::move(out), {&a}, [pa](detail::Node& self) {
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_matrix(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  auto* pa = a.node();
  return detail::make_result({n, m}, std::move(out), {&a}, [pa, m, n](detail::Node& self) {
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
  });
}

// Flat gather: out[k] = a.flat[indices[k]].
inline Tensor select(const Tensor& a, std::vector<std::size_t> indices) {
  std::vector<double> out(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    detail::require(indices[k] < a.size(), "select: index out of range");
    out[k] = a[indices[k]];
  }
  auto* pa = a.node();
  const std::size_t n = indices.size();
  return detail::make_result({n}, std::move(out), {&a}, [pa, idx = std::move(indices)](detail::Node& self) {
    auto& g = pa->ensure_grad();
    for (std::size_t k = 0; k < idx.size(); ++k) g[idx[k]] += self.grad[k];
  });
}

// Row gather from a matrix.
inline Tensor rows(const Tensor& a, std::vector<std::size_t> indices) {
  detail::require_matrix(a, "rows");
  const std::size_t cols = a.dim(1);
  std::vector<double> out(indices.size() * cols);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    detail::require(indices[k] < a.dim(0), "rows: index out of range");
    std::copy_n(a.values().begin() + static_cast<std::ptrdiff_t>(indices[k] * cols), cols,
                out.begin() + static_cast<std::ptrdiff_t>(k * cols));
  }
  auto* pa = a.node();
  const std::size_t n = indices.size();
  return detail::make_result({n, cols}, std::move(out), {&a},
                             [pa, cols, idx = std::move(indices)](detail::Node& self) {
                               auto& g = pa->ensure_grad();
                               for (std::size_t k = 0; k < idx.size(); ++k)
                                 for (std::size_t c = 0; c < cols; ++c) g[idx[k] * cols + c] += self.grad[k * cols + c];
                             });
}

// Flattens and concatenates.
inline Tensor concat(const std::vector<Tensor>& parts) {
  std::vector<double> out;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(out.size());
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  std::vector<detail::Node*> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  const std::size_t n = out.size();
  return detail::make_result({n}, std::move(out), parts,
                             [nodes, offsets](detail::Node& self) {
                               for (std::size_t k = 0; k < nodes.size(); ++k) {
                                 if (!nodes[k]->requires_grad) continue;
                                 auto& g = nodes[k]->ensure_grad();
                                 for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offsets[k] + i];
                               }
                             });
}

// log Σ exp over all elements.
inline Tensor logsumexp(const Tensor& a) {
  detail::require(a.size() > 0, "logsumexp: empty input");
  const double mx = *std::max_element(a.values().begin(), a.values().end());
  double s = 0.0;
  for (double v : a.values()) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  auto* pa = a.node();
  return detail::make_result({1}, {lse}, {&a}, [pa](detail::Node& self) {
    auto& g = pa->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * std::exp(pa->value[i] - self.value[0]);
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  detail::require(b.dim(0) == k, "matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                                     shape_string(b.shape()));
  std::vector<double> out(m * n, 0.0);
  const double* A = a.values().data();
  const double* B = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  auto* pa = a.node();
  auto* pb = b.node();
  return detail::make_result({m, n}, std::move(out), {&a, &b}, [pa, pb, m, k, n](detail::Node& self) {
    const double* G = self.grad.data();
    if (pa->requires_grad) {  // dA = G Bᵀ
      auto& ga = pa->ensure_grad();
      const double* B = pb->value.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * B[p * n + j];
          ga[i * k + p] += s;
        }
    }
    if (pb->requires_grad) {  // dB = Aᵀ G
      auto& gb = pb->ensure_grad();
      const double* A = pa->value.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A[i * k + p];
          if (av == 0.0) continue;
          double* grow = gb.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) grow[j] += av * G[i * n + j];
        }
    }
  });
}

// a · bᵀ without materialising the transpose.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul_nt");
  detail::require_matrix(b, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  detail::require(b.dim(1) == k, "matmul_nt: inner dimensions differ " + shape_string(a.shape()) + " x " +
                                     shape_string(b.shape()) + "^T");
  std::vector<double> out(m * n);
  const double* A = a.values().data();
  const double* B = b.values().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += A[i * k + p] * B[j * k + p];
      out[i * n + j] = s;
    }
  auto* pa = a.node();
  auto* pb = b.node();
  return detail::make_result({m, n}, std::move(out), {&a, &b}, [pa, pb, m, k, n](detail::Node& self) {
    const double* G = self.grad.data();
    if (pa->requires_grad) {  // dA = G B
      auto& ga = pa->ensure_grad();
      const double* B = pb->value.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double gv = G[i * n + j];
          if (gv == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gv * B[j * k + p];
        }
    }
    if (pb->requires_grad) {  // dB = Gᵀ A
      auto& gb = pb->ensure_grad();
      const double* A = pa->value.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double gv = G[i * n + j];
          if (gv == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) gb[j * k + p] += gv * A[i * k + p];
        }
    }
  });
}

// x·W + b with W stored in×out and b of length out.
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  detail::require_matrix(x, "linear");
  detail::require_matrix(weight, "linear");
  const std::size_t m = x.dim(0), in = x.dim(1), out_dim = weight.dim(1);
  detail::require(weight.dim(0) == in, "linear: input width " + std::to_string(in) + " vs weight " +
                                           shape_string(weight.shape()));
  detail::require(bias.size() == out_dim, "linear: bias length mismatch");
  std::vector<double> out(m * out_dim);
  const double* X = x.values().data();
  const double* W = weight.values().data();
  const double* B = bias.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * out_dim;
    std::copy_n(B, out_dim, row);
    for (std::size_t p = 0; p < in; ++p) {
      const double xv = X[i * in + p];
      if (xv == 0.0) continue;
      const double* wrow = W + p * out_dim;
      for (std::size_t j = 0; j < out_dim; ++j) row[j] += xv * wrow[j];
    }
  }
  auto* px = x.node();
  auto* pw = weight.node();
  auto* pb = bias.node();
  return detail::make_result({m, out_dim}, std::move(out), {&x, &weight, &bias},
                             [px, pw, pb, m, in, out_dim](detail::Node& self) {
                               const double* G = self.grad.data();
                               if (pb->requires_grad) {
                                 auto& gb = pb->ensure_grad();
                                 for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t j = 0; j < out_dim; ++j) gb[j] += G[i * out_dim + j];
                               }
                               if (pw->requires_grad) {
                                 auto& gw = pw->ensure_grad();
                                 const double* X = px->value.data();
                                 for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t p = 0; p < in; ++p) {
                                     const double xv = X[i * in + p];
                                     if (xv == 0.0) continue;
                                     double* grow = gw.data() + p * out_dim;
                                     for (std::size_t j = 0; j < out_dim; ++j) grow[j] += xv * G[i * out_dim + j];
                                   }
                               }
                               if (px->requires_grad) {
                                 auto& gx = px->ensure_grad();
                                 const double* W = pw->value.data();
                                 for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t p = 0; p < in; ++p) {
                                     double s = 0.0;
                                     for (std::size_t j = 0; j < out_dim; ++j) s += G[i * out_dim + j] * W[p * out_dim + j];
                                     gx[i * in + p] += s;
                                   }
                               }
                             });
}

// Adds a length-n bias to every row of an m×n matrix.
inline Tensor add_bias(const Tensor& a, const Tensor& bias) {
  detail::require_matrix(a, "add_bias");
  const std::size_t m = a.dim(0), n = a.dim(1);
  detail::require(bias.size() == n, "add_bias: bias length mismatch");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a[i * n + j] + bias[j];
  auto* pa = a.node();
  auto* pb = bias.node();
  return detail::make_result(a.shape(), std::move(out), {&a, &bias}, [pa, pb, m, n](detail::Node& self) {
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Row-wise normalisations

namespace detail {

inline Tensor softmax_rows_impl(const Tensor& logits, const double* mask, std::size_t mask_period) {
  require_matrix(logits, "softmax");
  const std::size_t m = logits.dim(0), n = logits.dim(1);
  std::vector<double> out(m * n);
  std::vector<double> z(n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = logits.values().data() + i * n;
    const double* mrow = mask ? mask + (i * n) % mask_period : nullptr;
    bool any_open = mrow == nullptr;
    if (mrow) {
      for (std::size_t j = 0; j < n && !any_open; ++j) any_open = mrow[j] > 0.5 * kMaskedLogit;
    }
    // A fully blocked row falls back to unmasked attention.
    const bool apply_mask = mrow && any_open;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      z[j] = row[j] + (apply_mask ? mrow[j] : 0.0);
      mx = std::max(mx, z[j]);
    }
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      z[j] = std::exp(z[j] - mx);
      s += z[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = z[j] / s;
  }
  auto* pl = logits.node();
  return make_result(logits.shape(), std::move(out), {&logits}, [pl, m, n](Node& self) {
    auto& g = pl->ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      const double* p = self.value.data() + i * n;
      const double* gy = self.grad.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += p[j] * gy[j];
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += p[j] * (gy[j] - dot);
    }
  });
}

}  // namespace detail

inline Tensor softmax_rows(const Tensor& logits) { return detail::softmax_rows_impl(logits, nullptr, 1); }

// Row softmax of logits + additive mask. The mask is either the same shape as
// the logits or a single row broadcast to all rows; it never receives gradient.
// Entries are expected in {0, kMaskedLogit}; rows with no open position are
// treated as fully open.
inline Tensor masked_softmax(const Tensor& logits, const Tensor& additive_mask) {
  detail::require_matrix(logits, "masked_softmax");
  const std::size_t n = logits.dim(1);
  detail::require(additive_mask.size() == logits.size() || additive_mask.size() == n,
                  "masked_softmax: mask " + shape_string(additive_mask.shape()) + " not broadcastable to " +
                      shape_string(logits.shape()));
  return detail::softmax_rows_impl(logits, additive_mask.values().data(), additive_mask.size());
}

inline Tensor log_softmax_rows(const Tensor& logits) {
  detail::require_matrix(logits, "log_softmax_rows");
  const std::size_t m = logits.dim(0), n = logits.dim(1);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = logits.values().data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = row[j] - lse;
  }
  auto* pl = logits.node();
  return detail::make_result(logits.shape(), std::move(out), {&logits}, [pl, m, n](detail::Node& self) {
    auto& g = pl->ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < n; ++j) gs += self.grad[i * n + j];
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i * n + j] - std::exp(self.value[i * n + j]) * gs;
    }
  });
}

// Normalises each row to zero mean / unit variance, then applies gamma, beta.
inline Tensor layernorm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
  detail::require_matrix(a, "layernorm");
  const std::size_t m = a.dim(0), n = a.dim(1);
  detail::require(gamma.size() == n && beta.size() == n, "layernorm: affine length mismatch");
  std::vector<double> out(a.size());
  std::vector<double> xhat(a.size());
  std::vector<double> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = a.values().data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (row[j] - mu) * inv_std[i];
      out[i * n + j] = xhat[i * n + j] * gamma[j] + beta[j];
    }
  }
  auto* pa = a.node();
  auto* pg = gamma.node();
  auto* pb = beta.node();
  return detail::make_result(
      a.shape(), std::move(out), {&a, &gamma, &beta},
      [pa, pg, pb, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
        const double* G = self.grad.data();
        if (pg->requires_grad) {
          auto& gg = pg->ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gg[j] += G[i * n + j] * xhat[i * n + j];
        }
        if (pb->requires_grad) {
          auto& gb = pb->ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j] += G[i * n + j];
        }
        if (pa->requires_grad) {
          auto& ga = pa->ensure_grad();
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t i = 0; i < m; ++i) {
            double mean_g = 0.0, mean_gx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double gj = G[i * n + j] * pg->value[j];
              mean_g += gj;
              mean_gx += gj * xhat[i * n + j];
            }
            mean_g *= inv_n;
            mean_gx *= inv_n;
            for (std::size_t j = 0; j < n; ++j) {
              const double gj = G[i * n + j] * pg->value[j];
              ga[i * n + j] += inv_std[i] * (gj - mean_g - xhat[i * n + j] * mean_gx);
            }
          }
        }
      });
}

inline Tensor layernorm(const Tensor& a, double eps = 1e-5) {
  detail::require_matrix(a, "layernorm");
  return layernorm(a, Tensor::full({a.dim(1)}, 1.0), Tensor::zeros({a.dim(1)}), eps);
}

// ---------------------------------------------------------------------------
// Loss primitives

// Elementwise binary cross-entropy on logits against constant targets.
inline Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets) {
  detail::require(targets.size() == logits.size(), "bce_with_logits: target size mismatch");
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = logits[i];
    out[i] = std::max(x, 0.0) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
  }
  auto* pl = logits.node();
  std::vector<double> y(targets.begin(), targets.end());
  return detail::make_result(logits.shape(), std::move(out), {&logits}, [pl, y = std::move(y)](detail::Node& self) {
    auto& g = pl->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (detail::stable_sigmoid(pl->value[i]) - y[i]);
  });
}

}  // namespace tubelink
