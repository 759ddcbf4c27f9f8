#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pcu/geom.hpp"
#include "pcu/loss.hpp"
#include "pcu/rng.hpp"

namespace pcu {

double chamfer(const PointCloud& a, const PointCloud& b);

/// Mean Euclidean matching cost over the optimal bijection (O(n^3)
/// shortest augmenting path). Sizes must match and stay within max_n.
double emd_exact(const PointCloud& a, const PointCloud& b, int64_t max_n = 512);

/// Entropic surrogate with linear cost for clouds too large for the exact
/// assignment.
double emd_approx(const PointCloud& a, const PointCloud& b, const SinkhornConfig& cfg,
                  SinkhornStats* stats = nullptr);

double fscore(const PointCloud& yp, const PointCloud& y, double tau);

/// Dispersion of point counts inside D equal-area surface disks: std of
/// n_i / (N*p) over seeds sampled uniformly on the mesh.
double nuc(const PointCloud& yp, const TriMesh& mesh, double p, int64_t d_seeds, Rng& rng);

std::pair<double, double> deviation_stats(const PointCloud& yp, const TriMesh& mesh);

double bbox_diagonal(const PointCloud& cloud);

/// Default F-score threshold: 1% of the ground-truth bounding-box diagonal.
double default_fscore_tau(const PointCloud& y);

struct MetricReport {
  double cd = 0;
  double emd = 0;
  double fscore = 0;
  double nuc = 0;       // evaluated at p = 0.8%
  double dev_mean = 0;
  double dev_std = 0;
  bool has_mesh_metrics = false;
  std::string emd_method;  // "exact" or "sinkhorn"
  std::vector<std::string> flags;

  std::string to_json() const;
};

MetricReport evaluate_pair(const PointCloud& yp, const PointCloud& y, const TriMesh* mesh,
                           const SinkhornConfig& cfg, Rng& rng, int64_t emd_exact_max = 512);

}  // namespace pcu
