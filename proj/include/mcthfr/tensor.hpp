#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// Each op builds a graph node holding its forward value, the parent nodes it
// was computed from, and a closure that pushes the node's gradient back into
// the parents. backward() walks the graph once in reverse topological order.
// A graph is single-use: calling backward() a second time through any
// already-visited interior node is an error rather than silent accumulation.
//
// Real is float for training and double for the gradient-check oracles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace mcthfr {

template <class Real>
struct Tensor {
  std::vector<int> shape;
  std::vector<Real> values;
  std::vector<Real> grad;  // allocated iff requires_grad
  bool requires_grad = false;
  bool consumed = false;  // set once backward has flowed through this node

  std::vector<std::shared_ptr<Tensor>> parents;
  std::function<void(Tensor&)> backward_fn;  // null for leaves

  std::size_t size() const { return values.size(); }
  bool is_leaf() const { return !backward_fn; }
  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  Real& at(int i, int j) { return values[static_cast<std::size_t>(i) * cols() + j]; }
  Real at(int i, int j) const { return values[static_cast<std::size_t>(i) * cols() + j]; }

  void zero_grad() { std::fill(grad.begin(), grad.end(), Real(0)); }
};

template <class Real>
using TensorPtr = std::shared_ptr<Tensor<Real>>;

namespace detail {

inline std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

inline std::size_t shape_numel(const std::vector<int>& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d < 0) throw std::invalid_argument("tensor extent must be non-negative");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

}  // namespace detail

template <class Real>
TensorPtr<Real> make_tensor(std::vector<int> shape, bool requires_grad = false) {
  auto t = std::make_shared<Tensor<Real>>();
  t->shape = std::move(shape);
  t->values.assign(detail::shape_numel(t->shape), Real(0));
  t->requires_grad = requires_grad;
  if (requires_grad) t->grad.assign(t->values.size(), Real(0));
  return t;
}

template <class Real>
TensorPtr<Real> make_tensor(std::vector<int> shape, std::vector<Real> values, bool requires_grad = false) {
  auto t = make_tensor<Real>(std::move(shape), requires_grad);
  if (values.size() != t->values.size())
    throw std::invalid_argument("value count does not match shape " + detail::shape_str(t->shape));
  t->values = std::move(values);
  return t;
}

template <class Real>
TensorPtr<Real> make_scalar(Real v, bool requires_grad = false) {
  return make_tensor<Real>({1}, {v}, requires_grad);
}

namespace detail {

// Builds a non-leaf node. requires_grad is inherited from the parents; the
// grad buffer itself is allocated lazily inside backward(), so forward-only
// evaluation never pays for it.
template <class Real>
TensorPtr<Real> make_node(std::vector<int> shape, std::vector<TensorPtr<Real>> parents,
                          std::function<void(Tensor<Real>&)> backward_fn) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  auto t = std::make_shared<Tensor<Real>>();
  t->shape = std::move(shape);
  t->values.assign(shape_numel(t->shape), Real(0));
  t->requires_grad = rg;
  if (rg) {
    t->parents = std::move(parents);
    t->backward_fn = std::move(backward_fn);
  }
  return t;
}

template <class Real>
void check_same_shape(const TensorPtr<Real>& a, const TensorPtr<Real>& b, const char* op) {
  if (a->shape != b->shape)
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a->shape) + " vs " +
                                shape_str(b->shape));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// backward

// Reverse-mode accumulation from a scalar loss into every requires_grad leaf.
// Interior nodes are marked consumed; re-entering a consumed graph throws.
template <class Real>
void backward(const TensorPtr<Real>& loss) {
  if (loss->size() != 1) throw std::invalid_argument("backward: loss must be a scalar, got " + detail::shape_str(loss->shape));
  if (!loss->requires_grad) throw std::invalid_argument("backward: loss does not depend on any requires_grad tensor");
  if (loss->consumed) throw std::logic_error("backward: graph already consumed; rebuild the graph before calling backward again");

  // Iterative post-order DFS; topo holds children before parents are visited,
  // so iterating it forward is reverse topological order from the loss.
  std::unordered_set<Tensor<Real>*> seen;
  std::vector<std::pair<Tensor<Real>*, std::size_t>> stack;
  stack.push_back({loss.get(), 0});
  seen.insert(loss.get());
  std::vector<Tensor<Real>*> order;
  while (!stack.empty()) {
    auto [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      ++stack.back().second;
      Tensor<Real>* p = node->parents[idx].get();
      if (p->requires_grad && !p->is_leaf() && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  // order is post-order (parents before children); reverse it.
  std::reverse(order.begin(), order.end());

  for (Tensor<Real>* n : order)
    if (n->consumed) throw std::logic_error("backward: graph shares consumed interior nodes; rebuild before reuse");

  if (loss->grad.empty()) loss->grad.assign(1, Real(0));
  loss->grad[0] = Real(1);
  for (Tensor<Real>* n : order) {
    if (n->grad.empty()) n->grad.assign(n->values.size(), Real(0));
    for (const auto& p : n->parents)
      if (p->requires_grad && p->grad.empty()) p->grad.assign(p->values.size(), Real(0));
    n->backward_fn(*n);
    n->consumed = true;
  }
}

// ---------------------------------------------------------------------------
// elementwise and shape ops

template <class Real>
TensorPtr<Real> add(const TensorPtr<Real>& a, const TensorPtr<Real>& b) {
  detail::check_same_shape(a, b, "add");
  auto out = detail::make_node<Real>(a->shape, {a, b}, [a, b](Tensor<Real>& n) {
    if (a->requires_grad)
      for (std::size_t i = 0; i < n.grad.size(); ++i) a->grad[i] += n.grad[i];
    if (b->requires_grad)
      for (std::size_t i = 0; i < n.grad.size(); ++i) b->grad[i] += n.grad[i];
  });
  for (std::size_t i = 0; i < out->values.size(); ++i) out->values[i] = a->values[i] + b->values[i];
  return out;
}

template <class Real>
TensorPtr<Real> sub(const TensorPtr<Real>& a, const TensorPtr<Real>& b) {
  detail::check_same_shape(a, b, "sub");
  auto out = detail::make_node<Real>(a->shape, {a, b}, [a, b](Tensor<Real>& n) {
    if (a->requires_grad)
      for (std::size_t i = 0; i < n.grad.size(); ++i) a->grad[i] += n.grad[i];
    if (b->requires_grad)
      for (std::size_t i = 0; i < n.grad.size(); ++i) b->grad[i] -= n.grad[i];
  });
  for (std::size_t i = 0; i < out->values.size(); ++i) out->values[i] = a->values[i] - b->values[i];
  return out;
}

template <class Real>
TensorPtr<Real> mul(const TensorPtr<Real>& a, const TensorPtr<Real>& b) {
  detail::check_same_shape(a, b, "mul");
  auto out = detail::make_node<Real>(a->shape, {a, b}, [a, b](Tensor<Real>& n) {
    if (a->requires_grad)
      for (std::size_t i = 0; i < n.grad.size(); ++i) a->grad[i] += n.grad[i] * b->values[i];
    if (b->requires_grad)
      for (std::size_t i = 0; i < n.grad.size(); ++i) b->grad[i] += n.grad[i] * a->values[i];
  });
  for (std::size_t i = 0; i < out->values.size(); ++i) out->values[i] = a->values[i] * b->values[i];
  return out;
}

template <class Real>
TensorPtr<Real> div(const TensorPtr<Real>& a, const TensorPtr<Real>& b) {
  detail::check_same_shape(a, b, "div");
  auto out = detail::make_node<Real>(a->shape, {a, b}, [a, b](Tensor<Real>& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const Real inv = Real(1) / b->values[i];
      if (a->requires_grad) a->grad[i] += n.grad[i] * inv;
      if (b->requires_grad) b->grad[i] -= n.grad[i] * a->values[i] * inv * inv;
    }
  });
  for (std::size_t i = 0; i < out->values.size(); ++i) out->values[i] = a->values[i] / b->values[i];
  return out;
}

template <class Real>
TensorPtr<Real> scale(const TensorPtr<Real>& a, Real c) {
  auto out = detail::make_node<Real>(a->shape, {a}, [a, c](Tensor<Real>& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) a->grad[i] += n.grad[i] * c;
  });
  for (std::size_t i = 0; i < out->values.size(); ++i) out->values[i] = a->values[i] * c;
  return out;
}

template <class Real>
TensorPtr<Real> neg(const TensorPtr<Real>& a) {
  return scale(a, Real(-1));
}

template <class Real>
TensorPtr<Real> relu(const TensorPtr<Real>& a) {
  auto out = detail::make_node<Real>(a->shape, {a}, [a](Tensor<Real>& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      if (a->values[i] > Real(0)) a->grad[i] += n.grad[i];
  });
  for (std::size_t i = 0; i < out->values.size(); ++i) out->values[i] = std::max(a->values[i], Real(0));
  return out;
}

template <class Real>
TensorPtr<Real> square(const TensorPtr<Real>& a) {
  auto out = detail::make_node<Real>(a->shape, {a}, [a](Tensor<Real>& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) a->grad[i] += n.grad[i] * Real(2) * a->values[i];
  });
  for (std::size_t i = 0; i < out->values.size(); ++i) out->values[i] = a->values[i] * a->values[i];
  return out;
}

// Integer power, k >= 1. Used for central moments.
template <class Real>
TensorPtr<Real> pow_int(const TensorPtr<Real>& a, int k) {
  if (k < 1) throw std::invalid_argument("pow_int: exponent must be >= 1");
  auto out = detail::make_node<Real>(a->shape, {a}, [a, k](Tensor<Real>& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      Real p = Real(1);
      for (int t = 0; t < k - 1; ++t) p *= a->values[i];
      a->grad[i] += n.grad[i] * Real(k) * p;
    }
  });
  for (std::size_t i = 0; i < out->values.size(); ++i) {
    Real p = Real(1);
    for (int t = 0; t < k; ++t) p *= a->values[i];
    out->values[i] = p;
  }
  return out;
}

// ln(max(x, floor)). The clamp guards log(0); below the floor the gradient is
// defined as zero (the clamped branch is constant).
template <class Real>
TensorPtr<Real> log_guard(const TensorPtr<Real>& a, Real floor) {
  auto out = detail::make_node<Real>(a->shape, {a}, [a, floor](Tensor<Real>& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      if (a->values[i] > floor) a->grad[i] += n.grad[i] / a->values[i];
  });
  for (std::size_t i = 0; i < out->values.size(); ++i) out->values[i] = std::log(std::max(a->values[i], floor));
  return out;
}

// sqrt(max(x, 0)). The gradient is treated as flat below the floor so norms
// of exactly-equal vectors stay exactly zero without dividing by zero.
template <class Real>
TensorPtr<Real> sqrt_guard(const TensorPtr<Real>& a, Real floor) {
  auto out = detail::make_node<Real>(a->shape, {a}, [a, floor](Tensor<Real>& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      if (a->values[i] > floor) a->grad[i] += n.grad[i] * Real(0.5) / std::sqrt(a->values[i]);
  });
  for (std::size_t i = 0; i < out->values.size(); ++i) out->values[i] = std::sqrt(std::max(a->values[i], Real(0)));
  return out;
}

// Huber-style smooth L1: 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise.
template <class Real>
TensorPtr<Real> smooth_l1(const TensorPtr<Real>& a) {
  auto out = detail::make_node<Real>(a->shape, {a}, [a](Tensor<Real>& n) {
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      const Real x = a->values[i];
      const Real d = std::abs(x) < Real(1) ? x : (x > Real(0) ? Real(1) : Real(-1));
      a->grad[i] += n.grad[i] * d;
    }
  });
  for (std::size_t i = 0; i < out->values.size(); ++i) {
    const Real x = a->values[i];
    out->values[i] = std::abs(x) < Real(1) ? Real(0.5) * x * x : std::abs(x) - Real(0.5);
  }
  return out;
}

// ---------------------------------------------------------------------------
// matrix ops

template <class Real>
TensorPtr<Real> matmul(const TensorPtr<Real>& a, const TensorPtr<Real>& b) {
  if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0])
    throw std::invalid_argument("matmul: incompatible shapes " + detail::shape_str(a->shape) + " vs " +
                                detail::shape_str(b->shape));
  const int m = a->shape[0], k = a->shape[1], n = b->shape[1];
  auto out = detail::make_node<Real>({m, n}, {a, b}, [a, b, m, k, n](Tensor<Real>& nd) {
    // dA += dC * B^T ; dB += A^T * dC
    if (a->requires_grad) {
      for (int i = 0; i < m; ++i)
        for (int t = 0; t < k; ++t) {
          Real s = 0;
          const Real* g = &nd.grad[static_cast<std::size_t>(i) * n];
          const Real* br = &b->values[static_cast<std::size_t>(t) * n];
          for (int j = 0; j < n; ++j) s += g[j] * br[j];
          a->grad[static_cast<std::size_t>(i) * k + t] += s;
        }
    }
    if (b->requires_grad) {
      for (int i = 0; i < m; ++i) {
        const Real* ar = &a->values[static_cast<std::size_t>(i) * k];
        const Real* g = &nd.grad[static_cast<std::size_t>(i) * n];
        for (int t = 0; t < k; ++t) {
          const Real c = ar[t];
          Real* bg = &b->grad[static_cast<std::size_t>(t) * n];
          for (int j = 0; j < n; ++j) bg[j] += c * g[j];
        }
      }
    }
  });
  for (int i = 0; i < m; ++i) {
    const Real* ar = &a->values[static_cast<std::size_t>(i) * k];
    Real* cr = &out->values[static_cast<std::size_t>(i) * n];
    for (int t = 0; t < k; ++t) {
      const Real c = ar[t];
      const Real* br = &b->values[static_cast<std::size_t>(t) * n];
      for (int j = 0; j < n; ++j) cr[j] += c * br[j];
    }
  }
  return out;
}

// A[m x k] * B[n x k]^T -> [m x n]; keeps the attention score product
// cache-friendly without materializing a transpose.
template <class Real>
TensorPtr<Real> matmul_nt(const TensorPtr<Real>& a, const TensorPtr<Real>& b) {
  if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[1])
    throw std::invalid_argument("matmul_nt: incompatible shapes " + detail::shape_str(a->shape) + " vs " +
                                detail::shape_str(b->shape));
  const int m = a->shape[0], k = a->shape[1], n = b->shape[0];
  auto out = detail::make_node<Real>({m, n}, {a, b}, [a, b, m, k, n](Tensor<Real>& nd) {
    // dA += dC * B ; dB += dC^T * A
    if (a->requires_grad) {
      for (int i = 0; i < m; ++i) {
        const Real* g = &nd.grad[static_cast<std::size_t>(i) * n];
        Real* ag = &a->grad[static_cast<std::size_t>(i) * k];
        for (int j = 0; j < n; ++j) {
          const Real c = g[j];
          const Real* br = &b->values[static_cast<std::size_t>(j) * k];
          for (int t = 0; t < k; ++t) ag[t] += c * br[t];
        }
      }
    }
    if (b->requires_grad) {
      for (int i = 0; i < m; ++i) {
        const Real* g = &nd.grad[static_cast<std::size_t>(i) * n];
        const Real* ar = &a->values[static_cast<std::size_t>(i) * k];
        for (int j = 0; j < n; ++j) {
          const Real c = g[j];
          Real* bg = &b->grad[static_cast<std::size_t>(j) * k];
          for (int t = 0; t < k; ++t) bg[t] += c * ar[t];
        }
      }
    }
  });
  for (int i = 0; i < m; ++i) {
    const Real* ar = &a->values[static_cast<std::size_t>(i) * k];
    Real* cr = &out->values[static_cast<std::size_t>(i) * n];
    for (int j = 0; j < n; ++j) {
      const Real* br = &b->values[static_cast<std::size_t>(j) * k];
      Real s = 0;
      for (int t = 0; t < k; ++t) s += ar[t] * br[t];
      cr[j] = s;
    }
  }
  return out;
}

template <class Real>
TensorPtr<Real> transpose(const TensorPtr<Real>& a) {
  if (a->shape.size() != 2) throw std::invalid_argument("transpose: expected 2-d tensor");
  const int m = a->shape[0], n = a->shape[1];
  auto out = detail::make_node<Real>({n, m}, {a}, [a, m, n](Tensor<Real>& nd) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) a->grad[static_cast<std::size_t>(j) * n + i] += nd.grad[static_cast<std::size_t>(i) * m + j];
  });
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out->values[static_cast<std::size_t>(j) * m + i] = a->values[static_cast<std::size_t>(i) * n + j];
  return out;
}

// X[m x n] + r[1 x n] broadcast over rows (bias add, additive masks).
template <class Real>
TensorPtr<Real> add_rowvec(const TensorPtr<Real>& x, const TensorPtr<Real>& r) {
  if (x->shape.size() != 2 || r->size() != static_cast<std::size_t>(x->shape[1]))
    throw std::invalid_argument("add_rowvec: shape mismatch " + detail::shape_str(x->shape) + " vs " +
                                detail::shape_str(r->shape));
  const int m = x->shape[0], n = x->shape[1];
  auto out = detail::make_node<Real>(x->shape, {x, r}, [x, r, m, n](Tensor<Real>& nd) {
    if (x->requires_grad)
      for (std::size_t i = 0; i < nd.grad.size(); ++i) x->grad[i] += nd.grad[i];
    if (r->requires_grad)
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) r->grad[j] += nd.grad[static_cast<std::size_t>(i) * n + j];
  });
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out->values[static_cast<std::size_t>(i) * n + j] = x->values[static_cast<std::size_t>(i) * n + j] + r->values[j];
  return out;
}

template <class Real>
TensorPtr<Real> sub_rowvec(const TensorPtr<Real>& x, const TensorPtr<Real>& r) {
  if (x->shape.size() != 2 || r->size() != static_cast<std::size_t>(x->shape[1]))
    throw std::invalid_argument("sub_rowvec: shape mismatch " + detail::shape_str(x->shape) + " vs " +
                                detail::shape_str(r->shape));
  const int m = x->shape[0], n = x->shape[1];
  auto out = detail::make_node<Real>(x->shape, {x, r}, [x, r, m, n](Tensor<Real>& nd) {
    if (x->requires_grad)
      for (std::size_t i = 0; i < nd.grad.size(); ++i) x->grad[i] += nd.grad[i];
    if (r->requires_grad)
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) r->grad[j] -= nd.grad[static_cast<std::size_t>(i) * n + j];
  });
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out->values[static_cast<std::size_t>(i) * n + j] = x->values[static_cast<std::size_t>(i) * n + j] - r->values[j];
  return out;
}

// Row-wise scale by fixed constants (used to zero padded rows after encoding).
template <class Real>
TensorPtr<Real> scale_rows(const TensorPtr<Real>& x, std::vector<Real> row_scales) {
  if (x->shape.size() != 2 || row_scales.size() != static_cast<std::size_t>(x->shape[0]))
    throw std::invalid_argument("scale_rows: need one scale per row");
  const int m = x->shape[0], n = x->shape[1];
  auto sc = std::make_shared<std::vector<Real>>(std::move(row_scales));
  auto out = detail::make_node<Real>(x->shape, {x}, [x, sc, m, n](Tensor<Real>& nd) {
    for (int i = 0; i < m; ++i) {
      const Real c = (*sc)[i];
      for (int j = 0; j < n; ++j) x->grad[static_cast<std::size_t>(i) * n + j] += nd.grad[static_cast<std::size_t>(i) * n + j] * c;
    }
  });
  for (int i = 0; i < m; ++i) {
    const Real c = (*sc)[i];
    for (int j = 0; j < n; ++j) out->values[static_cast<std::size_t>(i) * n + j] = x->values[static_cast<std::size_t>(i) * n + j] * c;
  }
  return out;
}

template <class Real>
TensorPtr<Real> concat_rows(const std::vector<TensorPtr<Real>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty input");
  const int n = parts[0]->cols();
  int m = 0;
  for (const auto& p : parts) {
    if (p->shape.size() != 2 || p->cols() != n) throw std::invalid_argument("concat_rows: column mismatch");
    m += p->rows();
  }
  auto out = detail::make_node<Real>({m, n}, parts, [parts, n](Tensor<Real>& nd) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t len = p->size();
      if (p->requires_grad)
        for (std::size_t i = 0; i < len; ++i) p->grad[i] += nd.grad[off + i];
      off += len;
    }
  });
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p->values.begin(), p->values.end(), out->values.begin() + off);
    off += p->size();
  }
  return out;
}

template <class Real>
TensorPtr<Real> concat_cols(const std::vector<TensorPtr<Real>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
  const int m = parts[0]->rows();
  int n = 0;
  for (const auto& p : parts) {
    if (p->shape.size() != 2 || p->rows() != m) throw std::invalid_argument("concat_cols: row mismatch");
    n += p->cols();
  }
  auto out = detail::make_node<Real>({m, n}, parts, [parts, m, n](Tensor<Real>& nd) {
    int coff = 0;
    for (const auto& p : parts) {
      const int pc = p->cols();
      if (p->requires_grad)
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < pc; ++j)
            p->grad[static_cast<std::size_t>(i) * pc + j] += nd.grad[static_cast<std::size_t>(i) * n + coff + j];
      coff += pc;
    }
  });
  int coff = 0;
  for (const auto& p : parts) {
    const int pc = p->cols();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < pc; ++j)
        out->values[static_cast<std::size_t>(i) * n + coff + j] = p->values[static_cast<std::size_t>(i) * pc + j];
    coff += pc;
  }
  return out;
}

template <class Real>
TensorPtr<Real> slice_cols(const TensorPtr<Real>& x, int c0, int len) {
  if (x->shape.size() != 2 || c0 < 0 || len < 1 || c0 + len > x->cols())
    throw std::invalid_argument("slice_cols: range out of bounds");
  const int m = x->rows(), n = x->cols();
  auto out = detail::make_node<Real>({m, len}, {x}, [x, c0, len, m, n](Tensor<Real>& nd) {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < len; ++j)
        x->grad[static_cast<std::size_t>(i) * n + c0 + j] += nd.grad[static_cast<std::size_t>(i) * len + j];
  });
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < len; ++j)
      out->values[static_cast<std::size_t>(i) * len + j] = x->values[static_cast<std::size_t>(i) * n + c0 + j];
  return out;
}

template <class Real>
TensorPtr<Real> sum_all(const TensorPtr<Real>& x) {
  auto out = detail::make_node<Real>({1}, {x}, [x](Tensor<Real>& nd) {
    const Real g = nd.grad[0];
    for (std::size_t i = 0; i < x->grad.size(); ++i) x->grad[i] += g;
  });
  Real s = 0;
  for (Real v : x->values) s += v;
  out->values[0] = s;
  return out;
}

// Column means of a [m x n] matrix -> [1 x n].
template <class Real>
TensorPtr<Real> mean_rows(const TensorPtr<Real>& x) {
  if (x->shape.size() != 2 || x->shape[0] < 1) throw std::invalid_argument("mean_rows: expected non-empty 2-d tensor");
  const int m = x->shape[0], n = x->shape[1];
  auto out = detail::make_node<Real>({1, n}, {x}, [x, m, n](Tensor<Real>& nd) {
    const Real inv = Real(1) / Real(m);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) x->grad[static_cast<std::size_t>(i) * n + j] += nd.grad[j] * inv;
  });
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out->values[j] += x->values[static_cast<std::size_t>(i) * n + j];
  for (int j = 0; j < n; ++j) out->values[j] /= Real(m);
  return out;
}

// Single element by flat index -> scalar.
template <class Real>
TensorPtr<Real> pick(const TensorPtr<Real>& x, std::size_t index) {
  if (index >= x->size()) throw std::invalid_argument("pick: index out of range");
  auto out = detail::make_node<Real>({1}, {x}, [x, index](Tensor<Real>& nd) { x->grad[index] += nd.grad[0]; });
  out->values[0] = x->values[index];
  return out;
}

// ---------------------------------------------------------------------------
// softmax / layer norm / conv1d

// Row-wise softmax with max-subtraction. Entries of -inf act as key-padding
// and receive exactly zero probability; a row with no finite entry throws.
template <class Real>
TensorPtr<Real> softmax_rows(const TensorPtr<Real>& x) {
  if (x->shape.size() != 2) throw std::invalid_argument("softmax_rows: expected 2-d tensor");
  const int m = x->shape[0], n = x->shape[1];
  auto out = detail::make_node<Real>(x->shape, {x}, [x, m, n](Tensor<Real>& nd) {
    // dx_j = p_j * (g_j - sum_k g_k p_k), rowwise
    for (int i = 0; i < m; ++i) {
      const Real* p = &nd.values[static_cast<std::size_t>(i) * n];
      const Real* g = &nd.grad[static_cast<std::size_t>(i) * n];
      Real dot = 0;
      for (int j = 0; j < n; ++j) dot += g[j] * p[j];
      Real* xg = &x->grad[static_cast<std::size_t>(i) * n];
      for (int j = 0; j < n; ++j) xg[j] += p[j] * (g[j] - dot);
    }
  });
  const Real ninf = -std::numeric_limits<Real>::infinity();
  for (int i = 0; i < m; ++i) {
    const Real* xr = &x->values[static_cast<std::size_t>(i) * n];
    Real* pr = &out->values[static_cast<std::size_t>(i) * n];
    Real mx = ninf;
    for (int j = 0; j < n; ++j) mx = std::max(mx, xr[j]);
    if (mx == ninf) throw std::domain_error("softmax_rows: row " + std::to_string(i) + " is entirely -inf");
    Real sum = 0;
    for (int j = 0; j < n; ++j) {
      pr[j] = xr[j] == ninf ? Real(0) : std::exp(xr[j] - mx);
      sum += pr[j];
    }
    const Real inv = Real(1) / sum;
    for (int j = 0; j < n; ++j) pr[j] *= inv;
  }
  return out;
}

// Normalizes each row to zero mean / unit variance (eps inside the sqrt),
// then applies elementwise gain and bias.
template <class Real>
TensorPtr<Real> layer_norm(const TensorPtr<Real>& x, const TensorPtr<Real>& gain, const TensorPtr<Real>& bias,
                           Real eps) {
  if (x->shape.size() != 2) throw std::invalid_argument("layer_norm: expected 2-d tensor");
  const int m = x->shape[0], n = x->shape[1];
  if (gain->size() != static_cast<std::size_t>(n) || bias->size() != static_cast<std::size_t>(n))
    throw std::invalid_argument("layer_norm: gain/bias length must equal last extent");
  auto mu = std::make_shared<std::vector<Real>>(m);
  auto inv_std = std::make_shared<std::vector<Real>>(m);
  auto out = detail::make_node<Real>(x->shape, {x, gain, bias}, [x, gain, bias, mu, inv_std, m, n](Tensor<Real>& nd) {
    for (int i = 0; i < m; ++i) {
      const Real* xr = &x->values[static_cast<std::size_t>(i) * n];
      const Real* g = &nd.grad[static_cast<std::size_t>(i) * n];
      const Real is = (*inv_std)[i];
      const Real mean = (*mu)[i];
      // accumulate the two row reductions of the LN gradient
      Real sum_gg = 0, sum_ggx = 0;  // sum(g*gain), sum(g*gain*xhat)
      for (int j = 0; j < n; ++j) {
        const Real gg = g[j] * gain->values[j];
        const Real xh = (xr[j] - mean) * is;
        sum_gg += gg;
        sum_ggx += gg * xh;
      }
      if (x->requires_grad) {
        Real* xg = &x->grad[static_cast<std::size_t>(i) * n];
        const Real invn = Real(1) / Real(n);
        for (int j = 0; j < n; ++j) {
          const Real gg = g[j] * gain->values[j];
          const Real xh = (xr[j] - mean) * is;
          xg[j] += is * (gg - invn * sum_gg - invn * xh * sum_ggx);
        }
      }
      if (gain->requires_grad)
        for (int j = 0; j < n; ++j) gain->grad[j] += g[j] * (xr[j] - mean) * is;
      if (bias->requires_grad)
        for (int j = 0; j < n; ++j) bias->grad[j] += g[j];
    }
  });
  for (int i = 0; i < m; ++i) {
    const Real* xr = &x->values[static_cast<std::size_t>(i) * n];
    Real* yr = &out->values[static_cast<std::size_t>(i) * n];
    Real mean = 0;
    for (int j = 0; j < n; ++j) mean += xr[j];
    mean /= Real(n);
    Real var = 0;
    for (int j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= Real(n);
    const Real is = Real(1) / std::sqrt(var + eps);
    (*mu)[i] = mean;
    (*inv_std)[i] = is;
    for (int j = 0; j < n; ++j) yr[j] = (xr[j] - mean) * is * gain->values[j] + bias->values[j];
  }
  return out;
}

// Temporal cross-correlation with zero "same" padding: X[T x d_in],
// W[k x d_in x d_out], b[d_out] -> [T x d_out]. k must be odd.
template <class Real>
TensorPtr<Real> conv1d_temporal(const TensorPtr<Real>& x, const TensorPtr<Real>& w, const TensorPtr<Real>& b) {
  if (x->shape.size() != 2 || w->shape.size() != 3)
    throw std::invalid_argument("conv1d_temporal: expected X[T x d_in], W[k x d_in x d_out]");
  const int T = x->shape[0], din = x->shape[1];
  const int k = w->shape[0], dout = w->shape[2];
  if (w->shape[1] != din) throw std::invalid_argument("conv1d_temporal: kernel input width " +
                                                      std::to_string(w->shape[1]) + " != input dim " + std::to_string(din));
  if (k % 2 == 0) throw std::invalid_argument("conv1d_temporal: kernel size must be odd, got " + std::to_string(k));
  if (b->size() != static_cast<std::size_t>(dout)) throw std::invalid_argument("conv1d_temporal: bias length mismatch");
  const int half = (k - 1) / 2;
  auto out = detail::make_node<Real>({T, dout}, {x, w, b}, [x, w, b, T, din, k, dout, half](Tensor<Real>& nd) {
    for (int t = 0; t < T; ++t) {
      const Real* g = &nd.grad[static_cast<std::size_t>(t) * dout];
      for (int q = 0; q < k; ++q) {
        const int src = t + q - half;
        if (src < 0 || src >= T) continue;
        const Real* xr = &x->values[static_cast<std::size_t>(src) * din];
        for (int ci = 0; ci < din; ++ci) {
          const std::size_t wbase = (static_cast<std::size_t>(q) * din + ci) * dout;
          if (w->requires_grad) {
            const Real xv = xr[ci];
            for (int co = 0; co < dout; ++co) w->grad[wbase + co] += xv * g[co];
          }
          if (x->requires_grad) {
            Real s = 0;
            for (int co = 0; co < dout; ++co) s += w->values[wbase + co] * g[co];
            x->grad[static_cast<std::size_t>(src) * din + ci] += s;
          }
        }
      }
      if (b->requires_grad)
        for (int co = 0; co < dout; ++co) b->grad[co] += g[co];
    }
  });
  for (int t = 0; t < T; ++t) {
    Real* yr = &out->values[static_cast<std::size_t>(t) * dout];
    for (int co = 0; co < dout; ++co) yr[co] = b->values[co];
    for (int q = 0; q < k; ++q) {
      const int src = t + q - half;
      if (src < 0 || src >= T) continue;
      const Real* xr = &x->values[static_cast<std::size_t>(src) * din];
      for (int ci = 0; ci < din; ++ci) {
        const Real xv = xr[ci];
        const Real* wr = &w->values[(static_cast<std::size_t>(q) * din + ci) * dout];
        for (int co = 0; co < dout; ++co) yr[co] += xv * wr[co];
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// small helpers shared by the model code

template <class Real>
bool all_finite(const Tensor<Real>& t) {
  for (Real v : t.values)
    if (!std::isfinite(v)) return false;
  return true;
}

// Additive key-padding mask row: 0 for valid positions, -inf past them.
template <class Real>
TensorPtr<Real> padding_mask_row(const std::vector<int>& segment_lengths, const std::vector<int>& valid_lengths) {
  int total = 0;
  for (int s : segment_lengths) total += s;
  auto mask = make_tensor<Real>({1, total});
  const Real ninf = -std::numeric_limits<Real>::infinity();
  int off = 0;
  for (std::size_t s = 0; s < segment_lengths.size(); ++s) {
    for (int t = 0; t < segment_lengths[s]; ++t) mask->values[off + t] = t < valid_lengths[s] ? Real(0) : ninf;
    off += segment_lengths[s];
  }
  return mask;
}

}  // namespace mcthfr
