#pragma once

// Dense tensors with reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared node holding shape, values and
// (optionally) gradient. Operations on tensors that require gradients record
// a backward closure and their parents; `backward(loss)` walks that graph
// once in reverse topological order and then releases it. Calling backward
// again on the same graph is an error: rebuild the forward pass instead.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "pvu/error.hpp"

namespace pvu::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

[[noreturn]] inline void shape_error(const char* op, const Shape& a, const Shape& b) {
  fail(ErrorCode::ShapeMismatch, std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.node_ = std::make_shared<Node<T>>();
    t.node_->value.assign(nn::numel(shape), T(0));
    t.node_->shape = std::move(shape);
    t.node_->requires_grad = requires_grad;
    return t;
  }
  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    auto t = zeros(std::move(shape), requires_grad);
    std::fill(t.node_->value.begin(), t.node_->value.end(), v);
    return t;
  }
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (values.size() != nn::numel(shape))
      fail(ErrorCode::ShapeMismatch,
           "tensor: " + std::to_string(values.size()) + " values do not fill shape " + shape_str(shape));
    Tensor t;
    t.node_ = std::make_shared<Node<T>>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(values);
    t.node_->requires_grad = requires_grad;
    return t;
  }
  static Tensor scalar(T v, bool requires_grad = false) { return from({}, {v}, requires_grad); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::vector<T>& values() { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }
  /// Gradient buffer; empty until backward reaches this tensor.
  std::vector<T>& grad() { return node_->grad; }
  const std::vector<T>& grad() const { return node_->grad; }
  T item() const {
    if (numel() != 1) fail(ErrorCode::ShapeMismatch, "item: tensor " + shape_str(shape()) + " is not a scalar");
    return node_->value[0];
  }
  T operator[](std::size_t i) const { return node_->value[i]; }

  void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  /// Copy of the values with no graph attached.
  Tensor detach() const { return from(shape(), values(), false); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

  /// Records an op output. `fn` is attached only when some parent needs grad.
  static Tensor make_result(Shape shape, std::vector<T> values, std::vector<Tensor> parents,
                            std::function<void(Node<T>&)> fn) {
    Tensor out = from(std::move(shape), std::move(values));
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.requires_grad();
    if (needs) {
      out.node_->requires_grad = true;
      for (auto& p : parents) out.node_->parents.push_back(p.node_);
      out.node_->backward_fn = std::move(fn);
    }
    return out;
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Runs reverse-mode accumulation from a scalar loss, then releases the graph.
template <class T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    fail(ErrorCode::ShapeMismatch, "backward: loss must be a scalar, got " + shape_str(loss.shape()));
  Node<T>* root = loss.node();
  if (root->consumed) fail(ErrorCode::GraphConsumed, "backward: graph already consumed; rebuild the forward pass");
  if (!root->requires_grad) return;

  // Iterative post-order DFS for a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (auto* n : order)
    if (n->backward_fn) n->ensure_grad();
  root->ensure_grad();
  root->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (!n->backward_fn) continue;
    for (auto& p : n->parents)
      if (p->requires_grad) p->ensure_grad();
    n->backward_fn(*n);
  }
  for (auto* n : order) {
    if (!n->backward_fn) continue;
    n->backward_fn = nullptr;
    n->parents.clear();
    n->consumed = true;
    if (n != root) std::vector<T>().swap(n->grad);
  }
  root->consumed = true;
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic with numpy-style broadcasting

namespace detail {

inline Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i + a.size() >= r ? a[i + a.size() - r] : 1;
    const std::size_t db = i + b.size() >= r ? b[i + b.size() - r] : 1;
    if (da != db && da != 1 && db != 1) shape_error(op, a, b);
    out[i] = std::max(da, db);
  }
  return out;
}

// For each output element, the flat index into an operand broadcast to `out`.
inline std::vector<std::size_t> broadcast_index(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::size_t> stride(r, 0);
  std::size_t s = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    const std::size_t oi = i + r - in.size();
    stride[oi] = in[i] == 1 ? 0 : s;
    s *= in[i];
  }
  const std::size_t n = numel(out);
  std::vector<std::size_t> idx(n);
  std::vector<std::size_t> counter(r, 0);
  std::size_t cur = 0;
  for (std::size_t k = 0; k < n; ++k) {
    idx[k] = cur;
    for (std::size_t d = r; d-- > 0;) {
      ++counter[d];
      cur += stride[d];
      if (counter[d] < out[d]) break;
      cur -= stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  return idx;
}

enum class Layout { Same, Suffix, General };

inline Layout layout_of(const Shape& in, const Shape& out) {
  if (in == out) return Layout::Same;
  if (in.size() <= out.size() && std::equal(in.begin(), in.end(), out.end() - static_cast<std::ptrdiff_t>(in.size())))
    return Layout::Suffix;
  return Layout::General;
}

template <class T, class F, class GA, class GB>
Tensor<T> binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, F f, GA ga, GB gb) {
  const Shape out_shape = broadcast_shape(op, a.shape(), b.shape());
  const std::size_t n = numel(out_shape);
  const auto la = layout_of(a.shape(), out_shape), lb = layout_of(b.shape(), out_shape);
  auto ia = la == Layout::General ? std::make_shared<std::vector<std::size_t>>(broadcast_index(a.shape(), out_shape))
                                  : nullptr;
  auto ib = lb == Layout::General ? std::make_shared<std::vector<std::size_t>>(broadcast_index(b.shape(), out_shape))
                                  : nullptr;
  const std::size_t na = a.numel(), nb = b.numel();
  auto map = [](Layout l, const std::shared_ptr<std::vector<std::size_t>>& idx, std::size_t k, std::size_t nin) {
    return l == Layout::Same ? k : (l == Layout::Suffix ? k % nin : (*idx)[k]);
  };
  // Calls body(k, ka, kb) for every output element, with tight loops for the
  // common equal-shape and trailing-broadcast cases.
  auto visit = [=](auto&& body) {
    if (la == Layout::Same && lb == Layout::Same) {
      for (std::size_t k = 0; k < n; ++k) body(k, k, k);
    } else if (la == Layout::Same && lb == Layout::Suffix && nb > 0) {
      for (std::size_t r = 0, k = 0; r < n / nb; ++r)
        for (std::size_t j = 0; j < nb; ++j, ++k) body(k, k, j);
    } else if (la == Layout::Suffix && lb == Layout::Same && na > 0) {
      for (std::size_t r = 0, k = 0; r < n / na; ++r)
        for (std::size_t j = 0; j < na; ++j, ++k) body(k, j, k);
    } else {
      for (std::size_t k = 0; k < n; ++k) body(k, map(la, ia, k, na), map(lb, ib, k, nb));
    }
  };
  std::vector<T> v(n);
  const auto& av = a.values();
  const auto& bv = b.values();
  visit([&](std::size_t k, std::size_t ka, std::size_t kb) { v[k] = f(av[ka], bv[kb]); });
  return Tensor<T>::make_result(out_shape, std::move(v), {a, b}, [=](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const T* g = self.grad.data();
    const T* x = pa.value.data();
    const T* y = pb.value.data();
    if (pa.requires_grad) {
      T* dx = pa.grad.data();
      visit([&](std::size_t k, std::size_t ka, std::size_t kb) { dx[ka] += ga(g[k], x[ka], y[kb]); });
    }
    if (pb.requires_grad) {
      T* dy = pb.grad.data();
      visit([&](std::size_t k, std::size_t ka, std::size_t kb) { dy[kb] += gb(g[k], x[ka], y[kb]); });
    }
  });
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T g, T, T) { return g; }, [](T g, T, T) { return g; });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T g, T, T) { return g; }, [](T g, T, T) { return -g; });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; }, [](T g, T x, T) { return g * x; });
}

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

namespace detail {
template <class T, class F, class D>
Tensor<T> unary(const Tensor<T>& a, F f, D df) {
  const std::size_t n = a.numel();
  std::vector<T> v(n);
  for (std::size_t k = 0; k < n; ++k) v[k] = f(a.values()[k]);
  return Tensor<T>::make_result(a.shape(), std::move(v), {a}, [=](Node<T>& self) {
    auto& p = *self.parents[0];
    for (std::size_t k = 0; k < n; ++k) p.grad[k] += self.grad[k] * df(p.value[k], self.value[k]);
  });
}
}  // namespace detail

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return detail::unary(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return detail::unary(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> neg(const Tensor<T>& a) { return scale(a, T(-1)); }

template <class T>
Tensor<T> square(const Tensor<T>& a) {
  return detail::unary(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <class T>
Tensor<T> sqrt(const Tensor<T>& a) {
  return detail::unary(a, [](T x) { return std::sqrt(x); }, [](T, T y) { return T(0.5) / y; });
}

/// Exact (erf-based) GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  constexpr T inv_sqrt2pi = T(0.39894228040143267794);
  return detail::unary(
      a, [](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
      [](T x, T) { return T(0.5) * (T(1) + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(T(-0.5) * x * x); });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.numel()) shape_error("reshape", a.shape(), shape);
  return Tensor<T>::make_result(std::move(shape), a.values(), {a}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    for (std::size_t k = 0; k < self.grad.size(); ++k) p.grad[k] += self.grad[k];
  });
}

/// Swaps two axes.
template <class T>
Tensor<T> transpose(const Tensor<T>& a, std::size_t ax0, std::size_t ax1) {
  const auto& s = a.shape();
  if (ax0 >= s.size() || ax1 >= s.size())
    fail(ErrorCode::ShapeMismatch, "transpose: axis out of range for " + shape_str(s));
  if (ax0 > ax1) std::swap(ax0, ax1);
  Shape out = s;
  std::swap(out[ax0], out[ax1]);
  // View the tensor as [outer, d0, mid, d1, inner].
  std::size_t outer = 1, mid = 1, inner = 1;
  for (std::size_t i = 0; i < ax0; ++i) outer *= s[i];
  for (std::size_t i = ax0 + 1; i < ax1; ++i) mid *= s[i];
  for (std::size_t i = ax1 + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t d0 = s[ax0], d1 = s[ax1];
  const std::size_t n = a.numel();
  auto src_of = std::make_shared<std::vector<std::size_t>>(n);
  std::size_t k = 0;
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < d1; ++j)
      for (std::size_t m = 0; m < mid; ++m)
        for (std::size_t i = 0; i < d0; ++i)
          for (std::size_t q = 0; q < inner; ++q) (*src_of)[k++] = (((o * d0 + i) * mid + m) * d1 + j) * inner + q;
  std::vector<T> v(n);
  for (std::size_t e = 0; e < n; ++e) v[e] = a.values()[(*src_of)[e]];
  return Tensor<T>::make_result(out, std::move(v), {a}, [src_of](Node<T>& self) {
    auto& p = *self.parents[0];
    for (std::size_t e = 0; e < self.grad.size(); ++e) p.grad[(*src_of)[e]] += self.grad[e];
  });
}

/// Concatenates along `axis`; all other extents must agree.
template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) fail(ErrorCode::EmptyInput, "concat: no inputs");
  Shape out = parts[0].shape();
  if (axis >= out.size()) fail(ErrorCode::ShapeMismatch, "concat: axis out of range for " + shape_str(out));
  out[axis] = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = parts[0].shape();
    if (a.size() != b.size()) shape_error("concat", b, a);
    a[axis] = b[axis] = 0;
    if (a != b) shape_error("concat", parts[0].shape(), p.shape());
    out[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= out[i];
  for (std::size_t i = axis + 1; i < out.size(); ++i) inner *= out[i];
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.dim(axis) * inner);
  const std::size_t row = out[axis] * inner;
  std::vector<T> v(numel(out));
  std::size_t off = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto& pv = parts[pi].values();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * widths[pi]), widths[pi],
                  v.begin() + static_cast<std::ptrdiff_t>(o * row + off));
    off += widths[pi];
  }
  return Tensor<T>::make_result(out, std::move(v), parts, [=](Node<T>& self) {
    std::size_t o2 = 0;
    for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
      auto& p = *self.parents[pi];
      if (p.requires_grad)
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t w = 0; w < widths[pi]; ++w) p.grad[o * widths[pi] + w] += self.grad[o * row + o2 + w];
      o2 += widths[pi];
    }
  });
}

/// Elements [start, start+len) along `axis`.
template <class T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t len) {
  const auto& s = a.shape();
  if (axis >= s.size() || start + len > s[axis])
    fail(ErrorCode::ShapeMismatch, "slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                                       ") out of bounds for " + shape_str(s));
  Shape out = s;
  out[axis] = len;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t in_row = s[axis] * inner, out_row = len * inner, off = start * inner;
  std::vector<T> v(numel(out));
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(a.values().begin() + static_cast<std::ptrdiff_t>(o * in_row + off), out_row,
                v.begin() + static_cast<std::ptrdiff_t>(o * out_row));
  return Tensor<T>::make_result(out, std::move(v), {a}, [=](Node<T>& self) {
    auto& p = *self.parents[0];
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t w = 0; w < out_row; ++w) p.grad[o * in_row + off + w] += self.grad[o * out_row + w];
  });
}

/// Rows of `a` (first axis) picked by `index`; repeated indices are allowed.
template <class T>
Tensor<T> gather(const Tensor<T>& a, std::vector<std::size_t> index) {
  if (a.rank() == 0) fail(ErrorCode::ShapeMismatch, "gather: scalar input");
  const std::size_t rows = a.dim(0), width = a.numel() / std::max<std::size_t>(rows, 1);
  for (auto i : index)
    if (i >= rows) fail(ErrorCode::InvalidArgument, "gather: index " + std::to_string(i) + " >= " + std::to_string(rows));
  Shape out = a.shape();
  out[0] = index.size();
  std::vector<T> v(index.size() * width);
  for (std::size_t r = 0; r < index.size(); ++r)
    std::copy_n(a.values().begin() + static_cast<std::ptrdiff_t>(index[r] * width), width,
                v.begin() + static_cast<std::ptrdiff_t>(r * width));
  auto idx = std::make_shared<std::vector<std::size_t>>(std::move(index));
  return Tensor<T>::make_result(out, std::move(v), {a}, [idx, width](Node<T>& self) {
    auto& p = *self.parents[0];
    for (std::size_t r = 0; r < idx->size(); ++r)
      for (std::size_t w = 0; w < width; ++w) p.grad[(*idx)[r] * width + w] += self.grad[r * width + w];
  });
}

/// Inverse of gather: places row r of `a` at row index[r] of a zero tensor
/// with `rows` rows, summing rows that share a destination.
template <class T>
Tensor<T> scatter(const Tensor<T>& a, std::vector<std::size_t> index, std::size_t rows) {
  if (a.rank() == 0 || a.dim(0) != index.size())
    fail(ErrorCode::ShapeMismatch, "scatter: " + std::to_string(index.size()) + " indices for " + shape_str(a.shape()));
  const std::size_t width = a.numel() / std::max<std::size_t>(index.size(), 1);
  for (auto i : index)
    if (i >= rows) fail(ErrorCode::InvalidArgument, "scatter: index " + std::to_string(i) + " >= " + std::to_string(rows));
  Shape out = a.shape();
  out[0] = rows;
  std::vector<T> v(rows * width, T(0));
  for (std::size_t r = 0; r < index.size(); ++r)
    for (std::size_t w = 0; w < width; ++w) v[index[r] * width + w] += a.values()[r * width + w];
  auto idx = std::make_shared<std::vector<std::size_t>>(std::move(index));
  return Tensor<T>::make_result(out, std::move(v), {a}, [idx, width](Node<T>& self) {
    auto& p = *self.parents[0];
    for (std::size_t r = 0; r < idx->size(); ++r)
      for (std::size_t w = 0; w < width; ++w) p.grad[r * width + w] += self.grad[(*idx)[r] * width + w];
  });
}

/// Repeats a size-1 axis `n` times.
template <class T>
Tensor<T> expand(const Tensor<T>& a, std::size_t axis, std::size_t n) {
  if (axis >= a.rank() || a.dim(axis) != 1)
    fail(ErrorCode::ShapeMismatch, "expand: axis " + std::to_string(axis) + " of " + shape_str(a.shape()) + " is not 1");
  Shape out = a.shape();
  out[axis] = n;
  return add(a, Tensor<T>::zeros(out));
}

// ---------------------------------------------------------------------------
// Matrix products

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// C[n,m] += A[n,k] * B[k,m]  (or B[m,k] when trans_b)
template <class T>
void gemm_acc(const T* A, const T* B, T* C, std::size_t n, std::size_t k, std::size_t m, bool trans_b) {
  const auto N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k), M = static_cast<Eigen::Index>(m);
  MatMap<T> c(C, N, M);
  ConstMatMap<T> a(A, N, K);
  if (trans_b)
    c.noalias() += a * ConstMatMap<T>(B, M, K).transpose();
  else
    c.noalias() += a * ConstMatMap<T>(B, K, M);
}

// C[k,m] += A[n,k]^T * G[n,m]
template <class T>
void gemm_at_acc(const T* A, const T* G, T* C, std::size_t n, std::size_t k, std::size_t m) {
  const auto N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k), M = static_cast<Eigen::Index>(m);
  MatMap<T>(C, K, M).noalias() += ConstMatMap<T>(A, N, K).transpose() * ConstMatMap<T>(G, N, M);
}

}  // namespace detail

/// Matrix product over the last two axes.
///
/// `a` is [..., n, k]. `b` is either a shared matrix [k, m] (applied to every
/// leading index of `a`) or batched [..., k, m] with the same leading extents.
/// With `trans_b`, `b` is given as [m, k] / [..., m, k].
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_b = false) {
  if (a.rank() < 2 || b.rank() < 2) shape_error("matmul", a.shape(), b.shape());
  const std::size_t n = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const std::size_t bk = trans_b ? b.dim(b.rank() - 1) : b.dim(b.rank() - 2);
  const std::size_t m = trans_b ? b.dim(b.rank() - 2) : b.dim(b.rank() - 1);
  if (bk != k) shape_error("matmul", a.shape(), b.shape());
  const bool shared = b.rank() == 2;
  std::size_t batch = 1;
  for (std::size_t i = 0; i + 2 < a.rank(); ++i) batch *= a.dim(i);
  if (!shared) {
    if (b.rank() != a.rank() || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()))
      shape_error("matmul", a.shape(), b.shape());
  }
  Shape out = a.shape();
  out.back() = m;
  std::vector<T> v(batch * n * m, T(0));
  const T* A = a.values().data();
  const T* B = b.values().data();
  if (shared) {
    detail::gemm_acc(A, B, v.data(), batch * n, k, m, trans_b);
  } else {
    for (std::size_t q = 0; q < batch; ++q)
      detail::gemm_acc(A + q * n * k, B + q * k * m, v.data() + q * n * m, n, k, m, trans_b);
  }
  return Tensor<T>::make_result(out, std::move(v), {a, b}, [=](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const T* G = self.grad.data();
    const std::size_t groups = shared ? 1 : batch;
    const std::size_t rows = shared ? batch * n : n;
    for (std::size_t q = 0; q < groups; ++q) {
      const T* Gq = G + q * rows * m;
      const T* Aq = pa.value.data() + q * rows * k;
      const T* Bq = pb.value.data() + (shared ? 0 : q * k * m);
      if (pa.requires_grad) {
        // dA = G * B^T  (B stored [k,m]) or G * B (B stored [m,k])
        T* dA = pa.grad.data() + q * rows * k;
        detail::gemm_acc(Gq, Bq, dA, rows, m, k, !trans_b);
      }
      if (pb.requires_grad) {
        T* dB = pb.grad.data() + (shared ? 0 : q * k * m);
        if (!trans_b)
          detail::gemm_at_acc(Aq, Gq, dB, rows, k, m);  // dB[k,m] = A^T G
        else
          detail::gemm_at_acc(Gq, Aq, dB, rows, m, k);  // dB[m,k] = G^T A
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and normalizations

namespace detail {
inline void axis_split(const Shape& s, std::size_t axis, std::size_t& outer, std::size_t& len, std::size_t& inner) {
  if (axis >= s.size()) fail(ErrorCode::ShapeMismatch, "axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  outer = inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  len = s[axis];
}
inline Shape drop_axis(Shape s, std::size_t axis, bool keepdim) {
  if (keepdim)
    s[axis] = 1;
  else
    s.erase(s.begin() + static_cast<std::ptrdiff_t>(axis));
  return s;
}
}  // namespace detail

/// Maximum over `axis`. The gradient flows to the first maximal element.
template <class T>
Tensor<T> max_axis(const Tensor<T>& a, std::size_t axis, bool keepdim = false) {
  std::size_t outer, len, inner;
  detail::axis_split(a.shape(), axis, outer, len, inner);
  if (len == 0) fail(ErrorCode::EmptyInput, "max_axis: empty axis");
  auto arg = std::make_shared<std::vector<std::size_t>>(outer * inner);
  std::vector<T> v(outer * inner);
  const auto& av = a.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t q = 0; q < inner; ++q) {
      std::size_t best = o * len * inner + q;
      for (std::size_t l = 1; l < len; ++l) {
        const std::size_t e = (o * len + l) * inner + q;
        if (av[e] > av[best]) best = e;
      }
      (*arg)[o * inner + q] = best;
      v[o * inner + q] = av[best];
    }
  return Tensor<T>::make_result(detail::drop_axis(a.shape(), axis, keepdim), std::move(v), {a}, [arg](Node<T>& self) {
    auto& p = *self.parents[0];
    for (std::size_t e = 0; e < arg->size(); ++e) p.grad[(*arg)[e]] += self.grad[e];
  });
}

/// Minimum over `axis`; gradient to the first minimal element.
template <class T>
Tensor<T> min_axis(const Tensor<T>& a, std::size_t axis, bool keepdim = false) {
  return neg(max_axis(neg(a), axis, keepdim));
}

template <class T>
Tensor<T> sum_axis(const Tensor<T>& a, std::size_t axis, bool keepdim = false) {
  std::size_t outer, len, inner;
  detail::axis_split(a.shape(), axis, outer, len, inner);
  std::vector<T> v(outer * inner, T(0));
  const auto& av = a.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t q = 0; q < inner; ++q) v[o * inner + q] += av[(o * len + l) * inner + q];
  return Tensor<T>::make_result(detail::drop_axis(a.shape(), axis, keepdim), std::move(v), {a},
                                [=](Node<T>& self) {
                                  auto& p = *self.parents[0];
                                  for (std::size_t o = 0; o < outer; ++o)
                                    for (std::size_t l = 0; l < len; ++l)
                                      for (std::size_t q = 0; q < inner; ++q)
                                        p.grad[(o * len + l) * inner + q] += self.grad[o * inner + q];
                                });
}

template <class T>
Tensor<T> mean_axis(const Tensor<T>& a, std::size_t axis, bool keepdim = false) {
  return scale(sum_axis(a, axis, keepdim), T(1) / static_cast<T>(a.dim(axis)));
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  return sum_axis(reshape(a, {a.numel()}), 0);
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

/// Softmax over the last axis.
template <class T>
Tensor<T> softmax(const Tensor<T>& a) {
  const std::size_t len = a.shape().empty() ? 1 : a.shape().back();
  const std::size_t rows = a.numel() / std::max<std::size_t>(len, 1);
  std::vector<T> v(a.numel());
  const auto& av = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = av.data() + r * len;
    T* y = v.data() + r * len;
    T mx = *std::max_element(x, x + len);
    T s = T(0);
    for (std::size_t i = 0; i < len; ++i) s += (y[i] = std::exp(x[i] - mx));
    for (std::size_t i = 0; i < len; ++i) y[i] /= s;
  }
  return Tensor<T>::make_result(a.shape(), std::move(v), {a}, [rows, len](Node<T>& self) {
    auto& p = *self.parents[0];
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * len;
      const T* g = self.grad.data() + r * len;
      T dot = T(0);
      for (std::size_t i = 0; i < len; ++i) dot += g[i] * y[i];
      for (std::size_t i = 0; i < len; ++i) p.grad[r * len + i] += y[i] * (g[i] - dot);
    }
  });
}

/// Log-softmax over the last axis.
template <class T>
Tensor<T> log_softmax(const Tensor<T>& a) {
  const std::size_t len = a.shape().back();
  const std::size_t rows = a.numel() / len;
  std::vector<T> v(a.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = a.values().data() + r * len;
    T mx = *std::max_element(x, x + len);
    T s = T(0);
    for (std::size_t i = 0; i < len; ++i) s += std::exp(x[i] - mx);
    const T lse = mx + std::log(s);
    for (std::size_t i = 0; i < len; ++i) v[r * len + i] = x[i] - lse;
  }
  return Tensor<T>::make_result(a.shape(), std::move(v), {a}, [rows, len](Node<T>& self) {
    auto& p = *self.parents[0];
    for (std::size_t r = 0; r < rows; ++r) {
      T gs = T(0);
      for (std::size_t i = 0; i < len; ++i) gs += self.grad[r * len + i];
      for (std::size_t i = 0; i < len; ++i)
        p.grad[r * len + i] += self.grad[r * len + i] - std::exp(self.value[r * len + i]) * gs;
    }
  });
}

/// Normalizes the last axis to zero mean and unit variance (no affine part).
template <class T>
Tensor<T> layernorm(const Tensor<T>& a, T eps = T(1e-5)) {
  const std::size_t len = a.shape().back();
  const std::size_t rows = a.numel() / len;
  std::vector<T> v(a.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = a.values().data() + r * len;
    T mu = T(0);
    for (std::size_t i = 0; i < len; ++i) mu += x[i];
    mu /= static_cast<T>(len);
    T var = T(0);
    for (std::size_t i = 0; i < len; ++i) var += (x[i] - mu) * (x[i] - mu);
    var /= static_cast<T>(len);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t i = 0; i < len; ++i) v[r * len + i] = (x[i] - mu) * is;
  }
  return Tensor<T>::make_result(a.shape(), std::move(v), {a}, [rows, len, inv_std](Node<T>& self) {
    auto& p = *self.parents[0];
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * len;
      const T* g = self.grad.data() + r * len;
      T gm = T(0), gy = T(0);
      for (std::size_t i = 0; i < len; ++i) {
        gm += g[i];
        gy += g[i] * y[i];
      }
      gm /= static_cast<T>(len);
      gy /= static_cast<T>(len);
      for (std::size_t i = 0; i < len; ++i) p.grad[r * len + i] += (*inv_std)[r] * (g[i] - gm - y[i] * gy);
    }
  });
}

/// Squared Euclidean distances between point sets: a [..., n, d], b [..., m, d]
/// with equal leading extents -> [..., n, m].
template <class T>
Tensor<T> pairwise_sqdist(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || a.rank() != b.rank() || a.shape().back() != b.shape().back() ||
      !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()))
    shape_error("pairwise_sqdist", a.shape(), b.shape());
  const std::size_t n = a.dim(a.rank() - 2), m = b.dim(b.rank() - 2), d = a.shape().back();
  const std::size_t batch = a.numel() / std::max<std::size_t>(n * d, 1);
  Shape out = a.shape();
  out.back() = m;
  std::vector<T> v(batch * n * m);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t q = 0; q < batch; ++q)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        T s = T(0);
        for (std::size_t c = 0; c < d; ++c) {
          const T diff = av[(q * n + i) * d + c] - bv[(q * m + j) * d + c];
          s += diff * diff;
        }
        v[(q * n + i) * m + j] = s;
      }
  return Tensor<T>::make_result(out, std::move(v), {a, b}, [=](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (std::size_t q = 0; q < batch; ++q)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          const T g = self.grad[(q * n + i) * m + j];
          if (g == T(0)) continue;
          for (std::size_t c = 0; c < d; ++c) {
            const T diff = pa.value[(q * n + i) * d + c] - pb.value[(q * m + j) * d + c];
            if (pa.requires_grad) pa.grad[(q * n + i) * d + c] += T(2) * g * diff;
            if (pb.requires_grad) pb.grad[(q * m + j) * d + c] -= T(2) * g * diff;
          }
        }
  });
}

/// Converts a tensor between scalar types (no graph).
template <class U, class T>
Tensor<U> cast(const Tensor<T>& a) {
  std::vector<U> v(a.values().begin(), a.values().end());
  return Tensor<U>::from(a.shape(), std::move(v));
}

}  // namespace pvu::nn
