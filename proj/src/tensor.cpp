#include "pcu/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace pcu {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

namespace {

void check_shape(const Shape& s) {
  for (int64_t d : s) {
    if (d <= 0) throw std::invalid_argument("tensor: nonpositive dim in shape " + shape_str(s));
  }
}

NodePtr make_node(Shape shape, std::vector<double> value) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  return n;
}

// Result node wired to parents; requires_grad derived from parents.
Tensor make_op(Shape shape, std::vector<double> value, std::vector<NodePtr> parents,
               std::function<void(TensorNode&)> fn) {
  auto n = make_node(std::move(shape), std::move(value));
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  n->requires_grad = rg;
  if (rg) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(fn);
  }
  return Tensor(n);
}

}  // namespace

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match " +
                                std::to_string(data.size()) + " values");
  node_ = make_node(std::move(shape), std::move(data));
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  check_shape(shape);
  std::vector<double> data(static_cast<size_t>(shape_numel(shape)), v);
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor({1}, {v}, requires_grad);
}

double Tensor::item() const {
  if (node_->numel() != 1)
    throw std::invalid_argument("tensor: item() on non-scalar " + shape_str(node_->shape));
  return node_->value[0];
}

Tensor linear(const Tensor& x, const Tensor& w) { return linear(x, w, Tensor()); }

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0))
    throw std::invalid_argument("linear: shapes " + shape_str(x.shape()) + " and " +
                                shape_str(w.shape()) + " do not conform");
  const int64_t n = x.dim(0), ci = x.dim(1), co = w.dim(1);
  if (b.defined() && (b.rank() != 1 || b.dim(0) != co))
    throw std::invalid_argument("linear: bias shape " + shape_str(b.shape()) +
                                " does not match output width " + std::to_string(co));

  std::vector<double> out(static_cast<size_t>(n * co), 0.0);
  const auto xv = x.data();
  const auto wv = w.data();
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t k = 0; k < ci; ++k) {
      const double xv_ik = xv[i * ci + k];
      if (xv_ik == 0.0) continue;
      const double* wrow = wv.data() + k * co;
      double* orow = out.data() + i * co;
      for (int64_t j = 0; j < co; ++j) orow[j] += xv_ik * wrow[j];
    }
  }
  if (b.defined()) {
    const auto bv = b.data();
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < co; ++j) out[i * co + j] += bv[j];
  }

  std::vector<NodePtr> parents{x.node(), w.node()};
  if (b.defined()) parents.push_back(b.node());
  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.defined() ? b.node() : nullptr;
  return make_op(
      {n, co}, std::move(out), std::move(parents),
      [xn, wn, bn, n, ci, co](TensorNode& self) {
        const auto& g = self.grad;
        if (xn->requires_grad) {
          xn->ensure_grad();
          for (int64_t i = 0; i < n; ++i)
            for (int64_t k = 0; k < ci; ++k) {
              double acc = 0.0;
              const double* grow = g.data() + i * co;
              const double* wrow = wn->value.data() + k * co;
              for (int64_t j = 0; j < co; ++j) acc += grow[j] * wrow[j];
              xn->grad[i * ci + k] += acc;
            }
        }
        if (wn->requires_grad) {
          wn->ensure_grad();
          for (int64_t i = 0; i < n; ++i)
            for (int64_t k = 0; k < ci; ++k) {
              const double xv_ik = xn->value[i * ci + k];
              if (xv_ik == 0.0) continue;
              const double* grow = g.data() + i * co;
              double* wg = wn->grad.data() + k * co;
              for (int64_t j = 0; j < co; ++j) wg[j] += xv_ik * grow[j];
            }
        }
        if (bn && bn->requires_grad) {
          bn->ensure_grad();
          for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < co; ++j) bn->grad[j] += g[i * co + j];
        }
      });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  auto xn = x.node();
  return make_op(x.shape(), std::move(out), {xn}, [xn](TensorNode& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (size_t i = 0; i < self.value.size(); ++i)
      if (xn->value[i] > 0.0) xn->grad[i] += self.grad[i];
  });
}

Tensor group_gather(const Tensor& x, std::span<const int64_t> idx, int64_t k) {
  if (x.rank() != 2) throw std::invalid_argument("group_gather: x must be rank 2");
  const int64_t n = x.dim(0), c = x.dim(1);
  if (k <= 0 || static_cast<int64_t>(idx.size()) != n * k)
    throw std::invalid_argument("group_gather: index table is not n*k");
  for (int64_t v : idx)
    if (v < 0 || v >= n)
      throw std::out_of_range("group_gather: index " + std::to_string(v) + " out of [0," +
                              std::to_string(n) + ")");
  std::vector<double> out(static_cast<size_t>(n * k * c));
  const auto xv = x.data();
  for (int64_t i = 0; i < n * k; ++i)
    std::copy_n(xv.data() + idx[i] * c, c, out.data() + i * c);

  std::vector<int64_t> idx_copy(idx.begin(), idx.end());
  auto xn = x.node();
  return make_op({n, k, c}, std::move(out), {xn},
                 [xn, idx_copy = std::move(idx_copy), c](TensorNode& self) {
                   if (!xn->requires_grad) return;
                   xn->ensure_grad();
                   for (size_t i = 0; i < idx_copy.size(); ++i) {
                     double* dst = xn->grad.data() + idx_copy[i] * c;
                     const double* src = self.grad.data() + i * c;
                     for (int64_t j = 0; j < c; ++j) dst[j] += src[j];
                   }
                 });
}

Tensor gather_rows(const Tensor& x, std::span<const int64_t> rows) {
  if (x.rank() < 1) throw std::invalid_argument("gather_rows: scalar input");
  const int64_t n = x.dim(0);
  const int64_t stride = x.size() / n;
  for (int64_t r : rows)
    if (r < 0 || r >= n)
      throw std::out_of_range("gather_rows: row " + std::to_string(r) + " out of [0," +
                              std::to_string(n) + ")");
  Shape out_shape = x.shape();
  out_shape[0] = static_cast<int64_t>(rows.size());
  std::vector<double> out(rows.size() * static_cast<size_t>(stride));
  const auto xv = x.data();
  for (size_t i = 0; i < rows.size(); ++i)
    std::copy_n(xv.data() + rows[i] * stride, stride, out.data() + i * stride);

  std::vector<int64_t> rows_copy(rows.begin(), rows.end());
  auto xn = x.node();
  return make_op(std::move(out_shape), std::move(out), {xn},
                 [xn, rows_copy = std::move(rows_copy), stride](TensorNode& self) {
                   if (!xn->requires_grad) return;
                   xn->ensure_grad();
                   for (size_t i = 0; i < rows_copy.size(); ++i) {
                     double* dst = xn->grad.data() + rows_copy[i] * stride;
                     const double* src = self.grad.data() + i * stride;
                     for (int64_t j = 0; j < stride; ++j) dst[j] += src[j];
                   }
                 });
}

Tensor reduce(const Tensor& x, int axis, Reduce mode) {
  if (axis < 0 || axis >= x.rank())
    throw std::invalid_argument("reduce: axis " + std::to_string(axis) + " invalid for " +
                                shape_str(x.shape()));
  const Shape& s = x.shape();
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (int i = axis + 1; i < x.rank(); ++i) inner *= s[i];
  const int64_t len = s[axis];

  Shape out_shape;
  for (int i = 0; i < x.rank(); ++i)
    if (i != axis) out_shape.push_back(s[i]);
  if (out_shape.empty()) out_shape.push_back(1);

  std::vector<double> out(static_cast<size_t>(outer * inner), 0.0);
  std::vector<int64_t> argmax;
  const auto xv = x.data();
  if (mode == Reduce::kMax) {
    argmax.resize(static_cast<size_t>(outer * inner));
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t in = 0; in < inner; ++in) {
        double best = xv[o * len * inner + in];
        int64_t best_a = 0;
        for (int64_t a = 1; a < len; ++a) {
          double v = xv[(o * len + a) * inner + in];
          if (v > best) {  // ties keep the lowest index
            best = v;
            best_a = a;
          }
        }
        out[o * inner + in] = best;
        argmax[o * inner + in] = best_a;
      }
  } else {
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t a = 0; a < len; ++a)
        for (int64_t in = 0; in < inner; ++in)
          out[o * inner + in] += xv[(o * len + a) * inner + in];
    if (mode == Reduce::kMean)
      for (double& v : out) v /= static_cast<double>(len);
  }

  auto xn = x.node();
  return make_op(std::move(out_shape), std::move(out), {xn},
                 [xn, outer, inner, len, mode, argmax = std::move(argmax)](TensorNode& self) {
                   if (!xn->requires_grad) return;
                   xn->ensure_grad();
                   for (int64_t o = 0; o < outer; ++o)
                     for (int64_t in = 0; in < inner; ++in) {
                       const double g = self.grad[o * inner + in];
                       if (mode == Reduce::kMax) {
                         xn->grad[(o * len + argmax[o * inner + in]) * inner + in] += g;
                       } else {
                         const double gi = mode == Reduce::kMean ? g / static_cast<double>(len) : g;
                         for (int64_t a = 0; a < len; ++a)
                           xn->grad[(o * len + a) * inner + in] += gi;
                       }
                     }
                 });
}

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  auto xn = x.node();
  return make_op({1}, {acc}, {xn}, [xn](TensorNode& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const double g = self.grad[0];
    for (double& gv : xn->grad) gv += g;
  });
}

namespace {

// Strides of a shape, with 0 stride on broadcast (extent-1) axes.
std::vector<int64_t> broadcast_strides(const Shape& s, const Shape& out) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[i] = (s[i] == 1 && out[i] != 1) ? 0 : acc;
    acc *= s[i];
  }
  return st;
}

}  // namespace

Tensor combine(const Tensor& a, const Tensor& b, Combine mode) {
  if (mode == Combine::kConcatLastAxis) {
    if (a.rank() != b.rank() || a.rank() < 1)
      throw std::invalid_argument("concat: rank mismatch " + shape_str(a.shape()) + " vs " +
                                  shape_str(b.shape()));
    for (int i = 0; i + 1 < a.rank(); ++i)
      if (a.dim(i) != b.dim(i))
        throw std::invalid_argument("concat: shapes " + shape_str(a.shape()) + " and " +
                                    shape_str(b.shape()) + " differ before the last axis");
    const int64_t rows = a.size() / a.dim(a.rank() - 1);
    const int64_t la = a.dim(a.rank() - 1), lb = b.dim(b.rank() - 1);
    Shape out_shape = a.shape();
    out_shape.back() = la + lb;
    std::vector<double> out(static_cast<size_t>(rows * (la + lb)));
    const auto av = a.data();
    const auto bv = b.data();
    for (int64_t r = 0; r < rows; ++r) {
      std::copy_n(av.data() + r * la, la, out.data() + r * (la + lb));
      std::copy_n(bv.data() + r * lb, lb, out.data() + r * (la + lb) + la);
    }
    auto an = a.node();
    auto bn = b.node();
    return make_op(std::move(out_shape), std::move(out), {an, bn},
                   [an, bn, rows, la, lb](TensorNode& self) {
                     if (an->requires_grad) {
                       an->ensure_grad();
                       for (int64_t r = 0; r < rows; ++r)
                         for (int64_t j = 0; j < la; ++j)
                           an->grad[r * la + j] += self.grad[r * (la + lb) + j];
                     }
                     if (bn->requires_grad) {
                       bn->ensure_grad();
                       for (int64_t r = 0; r < rows; ++r)
                         for (int64_t j = 0; j < lb; ++j)
                           bn->grad[r * lb + j] += self.grad[r * (la + lb) + la + j];
                     }
                   });
  }

  // kAdd
  if (a.rank() != b.rank())
    throw std::invalid_argument("add: rank mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  Shape out_shape(a.rank());
  for (int i = 0; i < a.rank(); ++i) {
    const int64_t da = a.dim(i), db = b.dim(i);
    if (da != db && da != 1 && db != 1)
      throw std::invalid_argument("add: shapes " + shape_str(a.shape()) + " and " +
                                  shape_str(b.shape()) + " do not conform");
    out_shape[i] = std::max(da, db);
  }
  const int64_t total = shape_numel(out_shape);
  const auto sa = broadcast_strides(a.shape(), out_shape);
  const auto sb = broadcast_strides(b.shape(), out_shape);
  const int rank = a.rank();

  auto map_index = [rank, dims = out_shape](int64_t flat, const std::vector<int64_t>& st) {
    int64_t off = 0;
    for (int i = rank - 1; i >= 0; --i) {
      off += (flat % dims[i]) * st[i];
      flat /= dims[i];
    }
    return off;
  };

  std::vector<double> out(static_cast<size_t>(total));
  const auto av = a.data();
  const auto bv = b.data();
  for (int64_t i = 0; i < total; ++i) out[i] = av[map_index(i, sa)] + bv[map_index(i, sb)];

  auto an = a.node();
  auto bn = b.node();
  return make_op(std::move(out_shape), std::move(out), {an, bn},
                 [an, bn, sa, sb, map_index, total](TensorNode& self) {
                   if (an->requires_grad) {
                     an->ensure_grad();
                     for (int64_t i = 0; i < total; ++i) an->grad[map_index(i, sa)] += self.grad[i];
                   }
                   if (bn->requires_grad) {
                     bn->ensure_grad();
                     for (int64_t i = 0; i < total; ++i) bn->grad[map_index(i, sb)] += self.grad[i];
                   }
                 });
}

Tensor add(const Tensor& a, const Tensor& b) { return combine(a, b, Combine::kAdd); }

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("sub: shapes " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()) + " differ");
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  auto an = a.node();
  auto bn = b.node();
  return make_op(a.shape(), std::move(out), {an, bn}, [an, bn](TensorNode& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("mul: shapes " + shape_str(a.shape()) + " and " +
                                shape_str(b.shape()) + " differ");
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  auto an = a.node();
  auto bn = b.node();
  return make_op(a.shape(), std::move(out), {an, bn}, [an, bn](TensorNode& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i] * an->value[i];
    }
  });
}

Tensor scale(const Tensor& x, double s) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v *= s;
  auto xn = x.node();
  return make_op(x.shape(), std::move(out), {xn}, [xn, s](TensorNode& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += s * self.grad[i];
  });
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  check_shape(new_shape);
  if (shape_numel(new_shape) != x.size())
    throw std::invalid_argument("reshape: " + shape_str(x.shape()) + " -> " +
                                shape_str(new_shape) + " changes element count");
  std::vector<double> out(x.data().begin(), x.data().end());
  auto xn = x.node();
  return make_op(std::move(new_shape), std::move(out), {xn}, [xn](TensorNode& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
  });
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw std::invalid_argument("backward: root must be a scalar tensor");
  NodePtr root = loss.node();
  if (!root->requires_grad) return;

  // DFS topological order over the reachable subgraph.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> seen;
  std::vector<std::pair<TensorNode*, size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior gradients are per-call; leaf gradients accumulate.
  for (TensorNode* n : order)
    if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0);
  root->ensure_grad();
  root->grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

}  // namespace pcu
