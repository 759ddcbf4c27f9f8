#include "pcu/loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "pcu/net.hpp"

namespace pcu {

namespace {

double pair_cost(const Vec3& a, const Vec3& b, OtCost cost) {
  const double d2 = dist2(a, b);
  return cost == OtCost::kHalfSquared ? 0.5 * d2 : std::sqrt(d2);
}

// One half-update: out_i = -eps * (LSE_j((dual[j] - C(i,j))/eps) - log(mb))
// where mb is the uniform weight denominator of the opposite side.
void half_update(std::span<const Vec3> rows, std::span<const Vec3> cols,
                 const std::vector<double>& dual, double eps, OtCost cost,
                 std::vector<double>& out) {
  const double log_m = std::log(static_cast<double>(cols.size()));
  for (size_t i = 0; i < rows.size(); ++i) {
    double maxv = -std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < cols.size(); ++j)
      maxv = std::max(maxv, (dual[j] - pair_cost(rows[i], cols[j], cost)) / eps);
    double acc = 0;
    for (size_t j = 0; j < cols.size(); ++j)
      acc += std::exp((dual[j] - pair_cost(rows[i], cols[j], cost)) / eps - maxv);
    out[i] = -eps * (maxv + std::log(acc) - log_m);
  }
}

bool lex_less(std::span<const Vec3> a, std::span<const Vec3> b) {
  if (a.size() != b.size()) return a.size() < b.size();
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].x != b[i].x) return a[i].x < b[i].x;
    if (a[i].y != b[i].y) return a[i].y < b[i].y;
    if (a[i].z != b[i].z) return a[i].z < b[i].z;
  }
  return false;
}

}  // namespace

SinkhornSolution solve_sinkhorn(std::span<const Vec3> a, std::span<const Vec3> b, OtCost cost,
                                const SinkhornConfig& cfg,
                                std::vector<double>* violation_trace) {
  if (a.empty() || b.empty()) throw std::invalid_argument("sinkhorn: empty cloud");
  if (cfg.epsilon <= 0 || cfg.max_iters < 1)
    throw std::invalid_argument("sinkhorn: epsilon must be positive, max_iters >= 1");

  // OT(A,B) == OT(B,A); canonicalize the argument order so the computed
  // value is bitwise symmetric.
  const bool swapped = lex_less(b, a);
  std::span<const Vec3> x = swapped ? b : a;
  std::span<const Vec3> y = swapped ? a : b;

  const size_t n = x.size(), m = y.size();
  std::vector<double> f(n, 0.0), g(m, 0.0), f_new(n);
  int iters = 0;

  if (cfg.anneal) {
    double max_c = 0;
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < m; ++j) max_c = std::max(max_c, pair_cost(x[i], y[j], cost));
    double eps_cur = max_c;
    while (eps_cur > cfg.epsilon && iters < cfg.max_iters) {
      half_update(x, y, g, eps_cur, cost, f);
      half_update(y, x, f, eps_cur, cost, g);
      eps_cur = std::max(cfg.epsilon, eps_cur * 0.5);
      ++iters;
    }
  }

  // Fixed-eps phase; each iteration leaves the row marginals exact and
  // measures the L1 violation the preceding column update introduced.
  const double eps = cfg.epsilon;
  half_update(x, y, g, eps, cost, f);
  double viol = std::numeric_limits<double>::infinity();
  while (iters < cfg.max_iters) {
    half_update(y, x, f, eps, cost, g);
    half_update(x, y, g, eps, cost, f_new);
    viol = 0;
    for (size_t i = 0; i < n; ++i)
      viol += std::abs(std::exp((f[i] - f_new[i]) / eps) - 1.0) / static_cast<double>(n);
    f.swap(f_new);
    ++iters;
    if (violation_trace) violation_trace->push_back(viol);
    if (viol < cfg.marginal_tol) break;
  }

  SinkhornSolution sol;
  sol.stats.converged = viol < cfg.marginal_tol;
  sol.stats.iters = iters;
  sol.stats.marginal_err = viol;
  double vf = 0, vg = 0;
  for (double v : f) vf += v;
  for (double v : g) vg += v;
  sol.value = vf / static_cast<double>(n) + vg / static_cast<double>(m);
  const double inv_nm = 1.0 / (static_cast<double>(n) * static_cast<double>(m));
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < m; ++j) {
      const double c = pair_cost(x[i], y[j], cost);
      sol.transport_cost += c * inv_nm * std::exp((f[i] + g[j] - c) / eps);
    }
  if (swapped) {
    sol.f = std::move(g);
    sol.g = std::move(f);
  } else {
    sol.f = std::move(f);
    sol.g = std::move(g);
  }
  return sol;
}

namespace {

std::vector<Vec3> tensor_points(const Tensor& t) {
  if (t.rank() != 2 || t.dim(1) != 3)
    throw std::invalid_argument("loss: expected an [n,3] tensor, got " + shape_str(t.shape()));
  std::vector<Vec3> pts(t.dim(0));
  const auto v = t.data();
  for (int64_t i = 0; i < t.dim(0); ++i) pts[i] = {v[i * 3], v[i * 3 + 1], v[i * 3 + 2]};
  return pts;
}

Tensor make_scalar_op(double value, std::vector<NodePtr> parents,
                      std::function<void(TensorNode&)> fn) {
  auto node = std::make_shared<TensorNode>();
  node->shape = {1};
  node->value = {value};
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  node->requires_grad = rg;
  if (rg) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(fn);
  }
  return Tensor(node);
}

}  // namespace

Tensor sinkhorn_ot(const Tensor& a, const Tensor& b, const SinkhornConfig& cfg, OtCost cost,
                   SinkhornStats* stats) {
  auto pa = tensor_points(a);
  auto pb = tensor_points(b);
  SinkhornSolution sol = solve_sinkhorn(pa, pb, cost, cfg);
  if (stats) *stats = sol.stats;

  auto an = a.node();
  auto bn = b.node();
  const double eps = cfg.epsilon;
  // Envelope gradient: dOT/dC_ij equals the transport plan, applied to the
  // cost derivatives and streamed row by row from the stored potentials.
  auto backward_fn = [an, bn, pa = std::move(pa), pb = std::move(pb), f = std::move(sol.f),
                      g = std::move(sol.g), eps, cost](TensorNode& self) {
    const double gout = self.grad[0];
    if (gout == 0.0) return;
    const double inv_nm = 1.0 / (static_cast<double>(pa.size()) * static_cast<double>(pb.size()));
    if (an->requires_grad) an->ensure_grad();
    if (bn->requires_grad) bn->ensure_grad();
    for (size_t i = 0; i < pa.size(); ++i) {
      for (size_t j = 0; j < pb.size(); ++j) {
        const double c = pair_cost(pa[i], pb[j], cost);
        const double plan = inv_nm * std::exp((f[i] + g[j] - c) / eps);
        if (plan == 0.0) continue;
        Vec3 dc = pa[i] - pb[j];  // d(cost)/d(a_i) for half-squared
        if (cost == OtCost::kLinear) {
          const double d = dc.norm();
          if (d == 0.0) continue;
          dc = dc * (1.0 / d);
        }
        const Vec3 contrib = dc * (gout * plan);
        if (an->requires_grad) {
          an->grad[i * 3 + 0] += contrib.x;
          an->grad[i * 3 + 1] += contrib.y;
          an->grad[i * 3 + 2] += contrib.z;
        }
        if (bn->requires_grad) {
          bn->grad[j * 3 + 0] -= contrib.x;
          bn->grad[j * 3 + 1] -= contrib.y;
          bn->grad[j * 3 + 2] -= contrib.z;
        }
      }
    }
  };
  return make_scalar_op(sol.value, {an, bn}, std::move(backward_fn));
}

Tensor sinkhorn_divergence(const Tensor& y, const Tensor& yp, const SinkhornConfig& cfg,
                           SinkhornStats* stats) {
  SinkhornStats s1, s2, s3;
  Tensor cross = sinkhorn_ot(y, yp, cfg, OtCost::kHalfSquared, &s1);
  Tensor self_y = sinkhorn_ot(y, y, cfg, OtCost::kHalfSquared, &s2);
  Tensor self_yp = sinkhorn_ot(yp, yp, cfg, OtCost::kHalfSquared, &s3);
  if (stats) {
    stats->converged = s1.converged && s2.converged && s3.converged;
    stats->iters = std::max({s1.iters, s2.iters, s3.iters});
    stats->marginal_err = std::max({s1.marginal_err, s2.marginal_err, s3.marginal_err});
  }
  return add(cross, add(scale(self_y, -0.5), scale(self_yp, -0.5)));
}

Tensor repulsion_loss(const Tensor& yp, int64_t k, double h) {
  if (h <= 0) throw std::invalid_argument("repulsion: h must be positive");
  auto pts = tensor_points(yp);
  const int64_t n = static_cast<int64_t>(pts.size());
  if (k >= n)
    throw std::invalid_argument("repulsion: k=" + std::to_string(k) +
                                " must be below the point count " + std::to_string(n));
  PointCloud cloud;
  cloud.points = pts;
  KnnGraph graph = build_knn(cloud, k);

  const double inv_h2 = 1.0 / (h * h);
  double loss = 0;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j : graph.row(i)) {
      const double r = std::sqrt(dist2(pts[i], pts[j]));
      loss += -r * std::exp(-r * r * inv_h2);
    }

  auto node = yp.node();
  auto backward_fn = [node, pts = std::move(pts), neighbors = std::move(graph.neighbors), k,
                      inv_h2, n](TensorNode& self) {
    if (!node->requires_grad) return;
    node->ensure_grad();
    const double gout = self.grad[0];
    for (int64_t i = 0; i < n; ++i)
      for (int64_t t = 0; t < k; ++t) {
        const int64_t j = neighbors[i * k + t];
        const Vec3 diff = pts[i] - pts[j];
        const double r = diff.norm();
        if (r == 0.0) continue;
        const double w = std::exp(-r * r * inv_h2);
        // d(-r w)/dr = w (2 r^2 / h^2 - 1)
        const double dr = w * (2.0 * r * r * inv_h2 - 1.0);
        const Vec3 grad = diff * (gout * dr / r);
        node->grad[i * 3 + 0] += grad.x;
        node->grad[i * 3 + 1] += grad.y;
        node->grad[i * 3 + 2] += grad.z;
        node->grad[j * 3 + 0] -= grad.x;
        node->grad[j * 3 + 1] -= grad.y;
        node->grad[j * 3 + 2] -= grad.z;
      }
  };
  return make_scalar_op(loss, {node}, std::move(backward_fn));
}

Tensor uniform_loss(const Tensor& yp, int64_t m_seeds, double r_d, double p) {
  if (m_seeds < 1) throw std::invalid_argument("uniform: M must be >= 1");
  if (!(p > 0 && p < 1)) throw std::invalid_argument("uniform: p must lie in (0,1)");
  if (r_d <= 0) throw std::invalid_argument("uniform: r_d must be positive");
  auto pts = tensor_points(yp);
  const int64_t n = static_cast<int64_t>(pts.size());
  PointCloud cloud;
  cloud.points = pts;

  const auto seeds = farthest_point_sample(cloud, std::min(m_seeds, n), 0);
  const double n_hat = static_cast<double>(n) * r_d * r_d;

  struct Member {
    int64_t point, nn;
    double dist;
  };
  struct Ball {
    double imbalance, d_hat;
    std::vector<Member> members;
  };
  std::vector<Ball> balls;
  double loss = 0;
  for (int64_t s : seeds) {
    const auto subset = ball_query(cloud, pts[s], r_d);
    if (subset.size() < 2) continue;  // no spacing to measure
    Ball ball;
    ball.imbalance =
        (static_cast<double>(subset.size()) - n_hat) * (static_cast<double>(subset.size()) - n_hat) /
        n_hat;
    ball.d_hat = std::sqrt(2.0 * M_PI * r_d * r_d /
                           (static_cast<double>(subset.size()) * std::sqrt(3.0)));
    double clutter = 0;
    for (size_t a = 0; a < subset.size(); ++a) {
      double best = std::numeric_limits<double>::infinity();
      int64_t best_j = -1;
      for (size_t b = 0; b < subset.size(); ++b) {
        if (a == b) continue;
        const double d = dist2(pts[subset[a]], pts[subset[b]]);
        if (d < best) {
          best = d;
          best_j = subset[b];
        }
      }
      const double d = std::sqrt(best);
      clutter += (d - ball.d_hat) * (d - ball.d_hat) / ball.d_hat;
      ball.members.push_back({subset[a], best_j, d});
    }
    loss += ball.imbalance * clutter;
    balls.push_back(std::move(ball));
  }

  auto node = yp.node();
  auto backward_fn = [node, pts = std::move(pts), balls = std::move(balls)](TensorNode& self) {
    if (!node->requires_grad) return;
    node->ensure_grad();
    const double gout = self.grad[0];
    for (const Ball& ball : balls)
      for (const Member& mem : ball.members) {
        if (mem.dist == 0.0) continue;
        const double coef = gout * ball.imbalance * 2.0 * (mem.dist - ball.d_hat) / ball.d_hat;
        const Vec3 grad = (pts[mem.point] - pts[mem.nn]) * (coef / mem.dist);
        node->grad[mem.point * 3 + 0] += grad.x;
        node->grad[mem.point * 3 + 1] += grad.y;
        node->grad[mem.point * 3 + 2] += grad.z;
        node->grad[mem.nn * 3 + 0] -= grad.x;
        node->grad[mem.nn * 3 + 1] -= grad.y;
        node->grad[mem.nn * 3 + 2] -= grad.z;
      }
  };
  return make_scalar_op(loss, {node}, std::move(backward_fn));
}

Tensor chamfer_loss(const Tensor& y, const Tensor& yp) {
  auto pa = tensor_points(y);
  auto pb = tensor_points(yp);
  if (pa.empty() || pb.empty()) throw std::invalid_argument("chamfer: empty cloud");

  auto nearest = [](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
    std::vector<int64_t> idx(from.size());
    for (size_t i = 0; i < from.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (size_t j = 0; j < to.size(); ++j) {
        const double d = dist2(from[i], to[j]);
        if (d < best) {
          best = d;
          idx[i] = static_cast<int64_t>(j);
        }
      }
    }
    return idx;
  };
  const auto na = nearest(pa, pb);
  const auto nb = nearest(pb, pa);
  double loss = 0;
  for (size_t i = 0; i < pa.size(); ++i) loss += dist2(pa[i], pb[na[i]]) / pa.size();
  for (size_t j = 0; j < pb.size(); ++j) loss += dist2(pb[j], pa[nb[j]]) / pb.size();

  auto an = y.node();
  auto bn = yp.node();
  auto backward_fn = [an, bn, pa = std::move(pa), pb = std::move(pb), na = std::move(na),
                      nb = std::move(nb)](TensorNode& self) {
    const double gout = self.grad[0];
    if (an->requires_grad) an->ensure_grad();
    if (bn->requires_grad) bn->ensure_grad();
    const double wa = 2.0 * gout / pa.size();
    for (size_t i = 0; i < pa.size(); ++i) {
      const Vec3 g = (pa[i] - pb[na[i]]) * wa;
      if (an->requires_grad) {
        an->grad[i * 3 + 0] += g.x;
        an->grad[i * 3 + 1] += g.y;
        an->grad[i * 3 + 2] += g.z;
      }
      if (bn->requires_grad) {
        bn->grad[na[i] * 3 + 0] -= g.x;
        bn->grad[na[i] * 3 + 1] -= g.y;
        bn->grad[na[i] * 3 + 2] -= g.z;
      }
    }
    const double wb = 2.0 * gout / pb.size();
    for (size_t j = 0; j < pb.size(); ++j) {
      const Vec3 g = (pb[j] - pa[nb[j]]) * wb;
      if (bn->requires_grad) {
        bn->grad[j * 3 + 0] += g.x;
        bn->grad[j * 3 + 1] += g.y;
        bn->grad[j * 3 + 2] += g.z;
      }
      if (an->requires_grad) {
        an->grad[nb[j] * 3 + 0] -= g.x;
        an->grad[nb[j] * 3 + 1] -= g.y;
        an->grad[nb[j] * 3 + 2] -= g.z;
      }
    }
  };
  return make_scalar_op(loss, {an, bn}, std::move(backward_fn));
}

Tensor compound_loss(const Tensor& y, const Tensor& yp, const LossConfig& cfg,
                     SinkhornStats* stats, LossBreakdown* breakdown) {
  if (y.dim(0) < 1 || yp.dim(0) < 1) throw std::invalid_argument("compound loss: empty cloud");
  const int64_t n_out = yp.dim(0);

  Tensor rec = cfg.chamfer_reconstruction ? chamfer_loss(y, yp)
                                          : sinkhorn_divergence(y, yp, cfg.sinkhorn, stats);
  if (breakdown) breakdown->rec = rec.item();
  Tensor total = scale(rec, cfg.weights.rec);
  if (cfg.weights.uni != 0.0) {
    const int64_t m = std::min<int64_t>(n_out, std::max<int64_t>(8, n_out / 50));
    const double r_d = std::sqrt(cfg.uniform_p);
    Tensor uni = uniform_loss(yp, m, r_d, cfg.uniform_p);
    if (breakdown) breakdown->uni = uni.item();
    total = add(total, scale(uni, cfg.weights.uni));
  }
  if (cfg.weights.rep != 0.0) {
    Tensor rep = repulsion_loss(yp, cfg.repulsion_k, cfg.repulsion_h);
    if (breakdown) breakdown->rep = rep.item();
    total = add(total, scale(rep, cfg.weights.rep));
  }
  if (breakdown) breakdown->total = total.item();
  return total;
}

double repulsion_loss_value(const PointCloud& yp, int64_t k, double h) {
  return repulsion_loss(to_tensor(yp), k, h).item();
}

double uniform_loss_value(const PointCloud& yp, int64_t m_seeds, double r_d, double p) {
  return uniform_loss(to_tensor(yp), m_seeds, r_d, p).item();
}

double sinkhorn_ot_value(const PointCloud& a, const PointCloud& b, const SinkhornConfig& cfg,
                         SinkhornStats* stats) {
  SinkhornSolution sol = solve_sinkhorn(a.points, b.points, OtCost::kHalfSquared, cfg);
  if (stats) *stats = sol.stats;
  return sol.value;
}

double sinkhorn_divergence_value(const PointCloud& y, const PointCloud& yp,
                                 const SinkhornConfig& cfg, SinkhornStats* stats) {
  return sinkhorn_divergence(to_tensor(y), to_tensor(yp), cfg, stats).item();
}

double compound_loss_value(const PointCloud& y, const PointCloud& yp, const LossConfig& cfg,
                           SinkhornStats* stats) {
  return compound_loss(to_tensor(y), to_tensor(yp), cfg, stats).item();
}

}  // namespace pcu
