#pragma once

// Reverse-mode automatic differentiation over row-major Eigen matrices.
//
// Every Var owns a node holding its value, its accumulated gradient and a closure that pushes
// the gradient to its parents. Nodes carry a monotonically increasing creation stamp, so sorting
// the reachable subgraph by stamp gives a valid reverse topological order.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ditracker/tensor.hpp"

namespace ditracker::ad {

namespace detail {
inline std::atomic<std::uint64_t>& stamp_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct Node {
  Matrix<T> value;
  Matrix<T> grad;
  bool requires_grad = false;
  std::uint64_t stamp = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Matrix<T>& grad_buffer() {
    if (grad.size() == 0) grad.setZero(value.rows(), value.cols());
    return grad;
  }
  template <typename Derived>
  void accumulate(const Eigen::MatrixBase<Derived>& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Matrix<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
    node_->stamp = detail::stamp_counter().fetch_add(1);
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Matrix<T> value) { return Var(std::move(value), false); }
  static Var scalar(T v) { return Var(Matrix<T>::Constant(1, 1, v), false); }

  bool defined() const { return static_cast<bool>(node_); }
  const Matrix<T>& value() const { return node_->value; }
  Matrix<T>& mutable_value() { return node_->value; }
  const Matrix<T>& grad() const { return node_->grad; }
  Matrix<T>& mutable_grad() { return node_->grad_buffer(); }
  bool has_grad() const { return node_->grad.size() != 0; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  void zero_grad() { node_->grad.resize(0, 0); }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }
  T item() const { return node_->value(0, 0); }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Builds a result node; parents and the backward closure are recorded only when some parent
/// requires a gradient and grad mode is enabled.
template <typename T, typename Fn>
Var<T> make_result(Matrix<T> value, std::initializer_list<Var<T>> parents, Fn&& backward) {
  Var<T> out(std::move(value), false);
  if (!detail::grad_mode()) return out;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return out;
  auto* node = out.node();
  node->requires_grad = true;
  for (const auto& p : parents) node->parents.push_back(p.shared());
  node->backward = std::forward<Fn>(backward);
  return out;
}

template <typename T, typename Fn>
Var<T> make_result(Matrix<T> value, const std::vector<Var<T>>& parents, Fn&& backward) {
  Var<T> out(std::move(value), false);
  if (!detail::grad_mode()) return out;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return out;
  auto* node = out.node();
  node->requires_grad = true;
  for (const auto& p : parents) node->parents.push_back(p.shared());
  node->backward = std::forward<Fn>(backward);
  return out;
}

template <typename T>
inline Node<T>* live(Node<T>& self, std::size_t i) {
  Node<T>* p = self.parents[i].get();
  return p->requires_grad ? p : nullptr;
}

/// Back-propagates from `root`, seeding d(root)/d(root) with ones.
template <typename T>
void backward(const Var<T>& root) {
  if (!root.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{root.node()};
  seen.insert(root.node());
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(), [](const Node<T>* a, const Node<T>* b) { return a->stamp > b->stamp; });
  root.node()->accumulate(Matrix<T>::Ones(root.rows(), root.cols()));
  for (Node<T>* n : order) {
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
  // Intermediate gradients are no longer needed once propagated; leaves keep theirs.
  for (Node<T>* n : order) {
    if (n->backward) n->grad.resize(0, 0);
  }
}

// ---------------------------------------------------------------------------------------------
// Elementary ops

template <typename T>
Var<T> stop_gradient(const Var<T>& a) {
  return Var<T>::constant(a.value());
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Matrix<T> v;
  v.noalias() = a.value() * b.value();
  return make_result<T>(std::move(v), {a, b}, [](Node<T>& self) {
    const auto& A = self.parents[0]->value;
    const auto& B = self.parents[1]->value;
    if (auto* pa = live(self, 0)) pa->grad_buffer().noalias() += self.grad * B.transpose();
    if (auto* pb = live(self, 1)) pb->grad_buffer().noalias() += A.transpose() * self.grad;
  });
}

/// a * b^T
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  require(a.cols() == b.cols(), "matmul_nt: inner dimensions differ");
  Matrix<T> v;
  v.noalias() = a.value() * b.value().transpose();
  return make_result<T>(std::move(v), {a, b}, [](Node<T>& self) {
    const auto& A = self.parents[0]->value;
    const auto& B = self.parents[1]->value;
    if (auto* pa = live(self, 0)) pa->grad_buffer().noalias() += self.grad * B;
    if (auto* pb = live(self, 1)) pb->grad_buffer().noalias() += self.grad.transpose() * A;
  });
}

template <typename T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  return make_result<T>(a.value() + b.value(), {a, b}, [](Node<T>& self) {
    if (auto* pa = live(self, 0)) pa->accumulate(self.grad);
    if (auto* pb = live(self, 1)) pb->accumulate(self.grad);
  });
}

template <typename T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  return make_result<T>(a.value() - b.value(), {a, b}, [](Node<T>& self) {
    if (auto* pa = live(self, 0)) pa->accumulate(self.grad);
    if (auto* pb = live(self, 1)) pb->accumulate(-self.grad);
  });
}

template <typename T>
Var<T> cwise_product(const Var<T>& a, const Var<T>& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "cwise_product: shape mismatch");
  return make_result<T>(a.value().cwiseProduct(b.value()), {a, b}, [](Node<T>& self) {
    if (auto* pa = live(self, 0)) pa->accumulate(self.grad.cwiseProduct(self.parents[1]->value));
    if (auto* pb = live(self, 1)) pb->accumulate(self.grad.cwiseProduct(self.parents[0]->value));
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  return make_result<T>(a.value() * s, {a}, [s](Node<T>& self) {
    if (auto* pa = live(self, 0)) pa->accumulate(self.grad * s);
  });
}

/// Adds a 1 x C row to every row of a.
template <typename T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: bias shape mismatch");
  Matrix<T> v = a.value();
  v.rowwise() += row.value().row(0);
  return make_result<T>(std::move(v), {a, row}, [](Node<T>& self) {
    if (auto* pa = live(self, 0)) pa->accumulate(self.grad);
    if (auto* pb = live(self, 1)) pb->accumulate(self.grad.colwise().sum());
  });
}

/// x -> 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
template <typename T>
Var<T> gelu(const Var<T>& a) {
  const T c = static_cast<T>(0.7978845608028654);
  Matrix<T> v = a.value().unaryExpr([c](T x) { return T(0.5) * x * (T(1) + std::tanh(c * (x + T(0.044715) * x * x * x))); });
  return make_result<T>(std::move(v), {a}, [c](Node<T>& self) {
    auto* pa = live(self, 0);
    if (!pa) return;
    const Matrix<T> d = pa->value.unaryExpr([c](T x) {
      const T u = c * (x + T(0.044715) * x * x * x);
      const T th = std::tanh(u);
      const T du = c * (T(1) + T(3) * T(0.044715) * x * x);
      return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
    });
    pa->accumulate(self.grad.cwiseProduct(d));
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return make_result<T>(a.value().cwiseMax(T(0)), {a}, [](Node<T>& self) {
    auto* pa = live(self, 0);
    if (!pa) return;
    pa->accumulate(self.grad.binaryExpr(pa->value, [](T g, T x) { return x > T(0) ? g : T(0); }));
  });
}

template <typename T>
Var<T> silu(const Var<T>& a) {
  Matrix<T> v = a.value().unaryExpr([](T x) { return x / (T(1) + std::exp(-x)); });
  return make_result<T>(std::move(v), {a}, [](Node<T>& self) {
    auto* pa = live(self, 0);
    if (!pa) return;
    pa->accumulate(self.grad.binaryExpr(pa->value, [](T g, T x) {
      const T s = T(1) / (T(1) + std::exp(-x));
      return g * (s + x * s * (T(1) - s));
    }));
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  return make_result<T>(Matrix<T>::Constant(1, 1, a.value().sum()), {a}, [](Node<T>& self) {
    auto* pa = live(self, 0);
    if (pa) pa->accumulate(Matrix<T>::Constant(pa->value.rows(), pa->value.cols(), self.grad(0, 0)));
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

template <typename T>
Var<T> square_mean(const Var<T>& a) {
  const T n = static_cast<T>(a.size());
  return make_result<T>(Matrix<T>::Constant(1, 1, a.value().squaredNorm() / n), {a}, [n](Node<T>& self) {
    auto* pa = live(self, 0);
    if (pa) pa->accumulate(pa->value * (T(2) * self.grad(0, 0) / n));
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Index rows, Index cols) {
  require(rows * cols == a.size(), "reshape: element count mismatch");
  Matrix<T> v = Eigen::Map<const Matrix<T>>(a.value().data(), rows, cols);
  return make_result<T>(std::move(v), {a}, [](Node<T>& self) {
    auto* pa = live(self, 0);
    if (pa) pa->accumulate(Eigen::Map<const Matrix<T>>(self.grad.data(), pa->value.rows(), pa->value.cols()));
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& a, Index start, Index count) {
  require(start >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  return make_result<T>(a.value().middleCols(start, count), {a}, [start, count](Node<T>& self) {
    auto* pa = live(self, 0);
    if (pa) pa->grad_buffer().middleCols(start, count) += self.grad;
  });
}

template <typename T>
Var<T> slice_rows(const Var<T>& a, Index start, Index count) {
  require(start >= 0 && start + count <= a.rows(), "slice_rows: out of range");
  return make_result<T>(a.value().middleRows(start, count), {a}, [start, count](Node<T>& self) {
    auto* pa = live(self, 0);
    if (pa) pa->grad_buffer().middleRows(start, count) += self.grad;
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  Index cols = 0;
  for (const auto& p : parts) {
    require(p.rows() == parts.front().rows(), "concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix<T> v(parts.front().rows(), cols);
  Index c = 0;
  for (const auto& p : parts) {
    v.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return make_result<T>(std::move(v), parts, [](Node<T>& self) {
    Index c0 = 0;
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      const Index n = self.parents[i]->value.cols();
      if (auto* p = live(self, i)) p->accumulate(self.grad.middleCols(c0, n));
      c0 += n;
    }
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  Index rows = 0;
  for (const auto& p : parts) {
    require(p.cols() == parts.front().cols(), "concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix<T> v(rows, parts.front().cols());
  Index r = 0;
  for (const auto& p : parts) {
    v.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return make_result<T>(std::move(v), parts, [](Node<T>& self) {
    Index r0 = 0;
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      const Index n = self.parents[i]->value.rows();
      if (auto* p = live(self, i)) p->accumulate(self.grad.middleRows(r0, n));
      r0 += n;
    }
  });
}

/// out.row(i) = a.row(index[i])
template <typename T>
Var<T> gather_rows(const Var<T>& a, std::vector<Index> index) {
  Matrix<T> v(static_cast<Index>(index.size()), a.cols());
  for (std::size_t i = 0; i < index.size(); ++i) v.row(static_cast<Index>(i)) = a.value().row(index[i]);
  return make_result<T>(std::move(v), {a}, [index = std::move(index)](Node<T>& self) {
    auto* pa = live(self, 0);
    if (!pa) return;
    auto& g = pa->grad_buffer();
    for (std::size_t i = 0; i < index.size(); ++i) g.row(index[i]) += self.grad.row(static_cast<Index>(i));
  });
}

// ---------------------------------------------------------------------------------------------
// Normalization and softmax

/// Per-row layer normalization with a 1 x C gain and bias.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5)) {
  const Index n = x.rows();
  const Index c = x.cols();
  require(gain.cols() == c && bias.cols() == c, "layer_norm: parameter width mismatch");
  Matrix<T> xhat(n, c);
  Vector<T> inv_std(n);
  for (Index i = 0; i < n; ++i) {
    const T mu = x.value().row(i).mean();
    const T var = (x.value().row(i).array() - mu).square().mean();
    inv_std(i) = T(1) / std::sqrt(var + eps);
    xhat.row(i) = (x.value().row(i).array() - mu) * inv_std(i);
  }
  Matrix<T> v = xhat;
  v.array().rowwise() *= gain.value().row(0).array();
  v.rowwise() += bias.value().row(0);
  return make_result<T>(std::move(v), {x, gain, bias}, [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
    const auto& g = self.grad;
    const auto& gamma = self.parents[1]->value;
    if (auto* pg = live(self, 1)) pg->accumulate(g.cwiseProduct(xhat).colwise().sum());
    if (auto* pb = live(self, 2)) pb->accumulate(g.colwise().sum());
    if (auto* px = live(self, 0)) {
      const Index c = g.cols();
      auto& gx = px->grad_buffer();
      for (Index i = 0; i < g.rows(); ++i) {
        const auto dxhat = (g.row(i).array() * gamma.row(0).array()).matrix();
        const T m1 = dxhat.mean();
        const T m2 = dxhat.cwiseProduct(xhat.row(i)).sum() / static_cast<T>(c);
        gx.row(i).array() += inv_std(i) * (dxhat.array() - m1 - xhat.row(i).array() * m2);
      }
    }
  });
}

namespace detail {
template <typename T, typename Derived>
void softmax_rows_inplace(Eigen::MatrixBase<Derived>& m) {
  for (Index i = 0; i < m.rows(); ++i) {
    auto row = m.row(i).array();
    row = (row - row.maxCoeff()).exp();
    row /= row.sum();
  }
}
/// d(logits) for row-softmax outputs p and upstream gradient g.
template <typename T, typename DP, typename DG>
Matrix<T> softmax_rows_backward(const Eigen::MatrixBase<DP>& p, const Eigen::MatrixBase<DG>& g) {
  Matrix<T> d = p.cwiseProduct(g);
  const Vector<T> s = d.rowwise().sum();
  d -= (p.array().colwise() * s.array()).matrix();
  return d;
}
}  // namespace detail

/// Row-wise softmax of a * factor.
template <typename T>
Var<T> softmax_rows(const Var<T>& a, T factor = T(1)) {
  Matrix<T> p = a.value() * factor;
  detail::softmax_rows_inplace<T>(p);
  Matrix<T> keep = p;
  return make_result<T>(std::move(p), {a}, [factor, keep = std::move(keep)](Node<T>& self) {
    auto* pa = live(self, 0);
    if (pa) pa->accumulate(detail::softmax_rows_backward<T>(keep, self.grad) * factor);
  });
}

/// Instance normalization of a (frames * cells) x C stack: statistics per frame and channel,
/// followed by a per-channel affine.
template <typename T>
Var<T> instance_norm(const Var<T>& x, Index frames, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5)) {
  const Index rows = x.rows();
  const Index c = x.cols();
  require(frames >= 1 && rows % frames == 0, "instance_norm: rows not divisible by frames");
  const Index cells = rows / frames;
  Matrix<T> xhat(rows, c);
  Matrix<T> inv_std(frames, c);
  for (Index f = 0; f < frames; ++f) {
    const auto block = x.value().middleRows(f * cells, cells);
    const RowVector<T> mu = block.colwise().mean();
    const RowVector<T> var = (block.rowwise() - mu).array().square().colwise().mean();
    inv_std.row(f) = (var.array() + eps).rsqrt();
    xhat.middleRows(f * cells, cells) = ((block.rowwise() - mu).array().rowwise() * inv_std.row(f).array()).matrix();
  }
  Matrix<T> v = xhat;
  v.array().rowwise() *= gain.value().row(0).array();
  v.rowwise() += bias.value().row(0);
  return make_result<T>(std::move(v), {x, gain, bias},
                        [xhat = std::move(xhat), inv_std = std::move(inv_std), frames, cells](Node<T>& self) {
                          const auto& g = self.grad;
                          const auto& gamma = self.parents[1]->value;
                          if (auto* pg = live(self, 1)) pg->accumulate(g.cwiseProduct(xhat).colwise().sum());
                          if (auto* pb = live(self, 2)) pb->accumulate(g.colwise().sum());
                          if (auto* px = live(self, 0)) {
                            auto& gx = px->grad_buffer();
                            const T n = static_cast<T>(cells);
                            for (Index f = 0; f < frames; ++f) {
                              const Matrix<T> dxhat = (g.middleRows(f * cells, cells).array().rowwise() * gamma.row(0).array()).matrix();
                              const auto xh = xhat.middleRows(f * cells, cells);
                              const RowVector<T> m1 = dxhat.colwise().sum() / n;
                              const RowVector<T> m2 = dxhat.cwiseProduct(xh).colwise().sum() / n;
                              Matrix<T> d = dxhat;
                              d.rowwise() -= m1;
                              d -= (xh.array().rowwise() * m2.array()).matrix();
                              gx.middleRows(f * cells, cells).array() += d.array().rowwise() * inv_std.row(f).array();
                            }
                          }
                        });
}

}  // namespace ditracker::ad
