#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pcu/geom.hpp"
#include "pcu/tensor.hpp"

namespace pcu {

struct SinkhornConfig {
  double epsilon = 1e-3;      // entropic regularization (squared-unit-length units)
  int max_iters = 200;
  double marginal_tol = 1e-6;  // L1 marginal violation stop
  bool anneal = true;          // epsilon-scaling warm start before the fixed-eps phase
};

struct SinkhornStats {
  bool converged = true;
  int iters = 0;
  double marginal_err = 0;
};

enum class OtCost { kHalfSquared, kLinear };

struct SinkhornSolution {
  std::vector<double> f, g;  // dual potentials
  double value = 0;          // <f,a> + <g,b> with uniform weights
  double transport_cost = 0;  // <C, plan>: the value without the entropy term
  SinkhornStats stats;
};

/// Log-domain Sinkhorn with uniform weights; O(n+m) memory, cost rows
/// streamed. When violation_trace is given it records the L1 row-marginal
/// violation after every fixed-eps iteration.
SinkhornSolution solve_sinkhorn(std::span<const Vec3> a, std::span<const Vec3> b, OtCost cost,
                                const SinkhornConfig& cfg,
                                std::vector<double>* violation_trace = nullptr);

/// Entropic OT value as a graph node; gradients w.r.t. both coordinate
/// tensors via the transport plan. a, b are [n,3] / [m,3].
Tensor sinkhorn_ot(const Tensor& a, const Tensor& b, const SinkhornConfig& cfg,
                   OtCost cost = OtCost::kHalfSquared, SinkhornStats* stats = nullptr);

/// Debiased divergence OT(y,yp) - OT(y,y)/2 - OT(yp,yp)/2.
Tensor sinkhorn_divergence(const Tensor& y, const Tensor& yp, const SinkhornConfig& cfg,
                           SinkhornStats* stats = nullptr);

/// Sum over points of -r * exp(-r^2/h^2) to the k nearest neighbors.
Tensor repulsion_loss(const Tensor& yp, int64_t k, double h);

/// Ball-counting uniformity: FPS seeds, per-ball imbalance weight
/// (detached) times the clutter of nearest-neighbor spacings. Subsets with
/// fewer than two points contribute zero.
Tensor uniform_loss(const Tensor& yp, int64_t m_seeds, double r_d, double p);

/// Differentiable Chamfer distance (ablation reconstruction term).
Tensor chamfer_loss(const Tensor& y, const Tensor& yp);

struct LossWeights {
  double rec = 1.0;
  double uni = 0.001;
  double rep = 0.005;
};

struct LossConfig {
  LossWeights weights;
  SinkhornConfig sinkhorn;
  int64_t repulsion_k = 5;
  double repulsion_h = 0.03;
  double uniform_p = 0.01;  // ball area fraction; r_d = sqrt(p), M = max(8, N/50) capped at N
  bool chamfer_reconstruction = false;  // swap the Sinkhorn term for Chamfer
};

struct LossBreakdown {
  double rec = 0, uni = 0, rep = 0, total = 0;
};

Tensor compound_loss(const Tensor& y, const Tensor& yp, const LossConfig& cfg,
                     SinkhornStats* stats = nullptr, LossBreakdown* breakdown = nullptr);

// Forward-only conveniences over raw clouds.
double repulsion_loss_value(const PointCloud& yp, int64_t k, double h);
double uniform_loss_value(const PointCloud& yp, int64_t m_seeds, double r_d, double p);
double sinkhorn_ot_value(const PointCloud& a, const PointCloud& b, const SinkhornConfig& cfg,
                         SinkhornStats* stats = nullptr);
double sinkhorn_divergence_value(const PointCloud& y, const PointCloud& yp,
                                 const SinkhornConfig& cfg, SinkhornStats* stats = nullptr);
double compound_loss_value(const PointCloud& y, const PointCloud& yp, const LossConfig& cfg,
                           SinkhornStats* stats = nullptr);

}  // namespace pcu
