#include "pcu/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace pcu {

namespace {

double nearest_dist2(const Vec3& p, const PointCloud& cloud) {
  double best = std::numeric_limits<double>::infinity();
  for (const Vec3& q : cloud.points) best = std::min(best, dist2(p, q));
  return best;
}

}  // namespace

double chamfer(const PointCloud& a, const PointCloud& b) {
  if (a.n() < 1 || b.n() < 1) throw std::invalid_argument("chamfer: empty cloud");
  double da = 0, db = 0;
  for (const Vec3& p : a.points) da += nearest_dist2(p, b);
  for (const Vec3& q : b.points) db += nearest_dist2(q, a);
  return da / static_cast<double>(a.n()) + db / static_cast<double>(b.n());
}

namespace {

// Shortest-augmenting-path assignment over an n x n cost matrix.
double assignment_cost(const std::vector<double>& cost, int64_t n) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0), v(n + 1, 0), minv(n + 1);
  std::vector<int64_t> match(n + 1, 0), way(n + 1, 0);
  for (int64_t i = 1; i <= n; ++i) {
    match[0] = i;
    int64_t j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int64_t i0 = match[j0];
      double delta = kInf;
      int64_t j1 = 0;
      for (int64_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int64_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int64_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0);
  }
  double total = 0;
  for (int64_t j = 1; j <= n; ++j) total += cost[(match[j] - 1) * n + (j - 1)];
  return total;
}

}  // namespace

double emd_exact(const PointCloud& a, const PointCloud& b, int64_t max_n) {
  if (a.n() != b.n())
    throw std::invalid_argument("emd_exact: cloud sizes differ (" + std::to_string(a.n()) +
                                " vs " + std::to_string(b.n()) + ")");
  if (a.n() < 1) throw std::invalid_argument("emd_exact: empty cloud");
  if (a.n() > max_n)
    throw std::invalid_argument("emd_exact: size " + std::to_string(a.n()) +
                                " exceeds the bound " + std::to_string(max_n));
  const int64_t n = a.n();
  std::vector<double> cost(static_cast<size_t>(n * n));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j) cost[i * n + j] = std::sqrt(dist2(a[i], b[j]));
  return assignment_cost(cost, n) / static_cast<double>(n);
}

double emd_approx(const PointCloud& a, const PointCloud& b, const SinkhornConfig& cfg,
                  SinkhornStats* stats) {
  if (a.n() < 1 || b.n() < 1) throw std::invalid_argument("emd_approx: empty cloud");
  SinkhornSolution sol = solve_sinkhorn(a.points, b.points, OtCost::kLinear, cfg);
  if (stats) *stats = sol.stats;
  // transport cost rather than the dual value: the entropy offset would
  // never vanish on identical clouds
  return sol.transport_cost;
}

double fscore(const PointCloud& yp, const PointCloud& y, double tau) {
  if (tau <= 0) throw std::invalid_argument("fscore: tau must be positive");
  if (yp.n() < 1 || y.n() < 1) throw std::invalid_argument("fscore: empty cloud");
  const double tau2 = tau * tau;
  int64_t hit_p = 0, hit_r = 0;
  for (const Vec3& p : yp.points)
    if (nearest_dist2(p, y) <= tau2) ++hit_p;
  for (const Vec3& q : y.points)
    if (nearest_dist2(q, yp) <= tau2) ++hit_r;
  const double precision = static_cast<double>(hit_p) / static_cast<double>(yp.n());
  const double recall = static_cast<double>(hit_r) / static_cast<double>(y.n());
  if (precision + recall == 0) return 0;
  return 2 * precision * recall / (precision + recall);
}

double bbox_diagonal(const PointCloud& cloud) {
  if (cloud.n() < 1) throw std::invalid_argument("bbox: empty cloud");
  Vec3 lo = cloud[0], hi = cloud[0];
  for (const Vec3& p : cloud.points) {
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
  }
  return (hi - lo).norm();
}

double default_fscore_tau(const PointCloud& y) { return 0.01 * bbox_diagonal(y); }

double nuc(const PointCloud& yp, const TriMesh& mesh, double p, int64_t d_seeds, Rng& rng) {
  if (!(p > 0 && p < 1)) throw std::invalid_argument("nuc: p must lie in (0,1)");
  if (d_seeds < 2) throw std::invalid_argument("nuc: need at least 2 seed disks");
  if (mesh.n_faces() == 0 || mesh.total_area <= 0)
    throw std::invalid_argument("nuc: empty mesh");

  const PointCloud seeds = sample_mesh_surface(mesh, d_seeds, rng);
  const double r = std::sqrt(p * mesh.total_area / M_PI);

  // Euclidean ball intersected with mesh-proximal points approximates the
  // surface disk; proximity cutoff is 2% of the mesh bbox diagonal.
  PointCloud mesh_verts;
  mesh_verts.points = mesh.vertices;
  const double proximal = 0.02 * bbox_diagonal(mesh_verts);
  MeshDistance dist(mesh);
  std::vector<char> near_mesh(yp.n());
  for (int64_t i = 0; i < yp.n(); ++i) near_mesh[i] = dist.distance(yp[i]) <= proximal;

  const double expected = static_cast<double>(yp.n()) * p;
  std::vector<double> ratios;
  ratios.reserve(d_seeds);
  const double r2 = r * r;
  for (const Vec3& s : seeds.points) {
    int64_t count = 0;
    for (int64_t i = 0; i < yp.n(); ++i)
      if (near_mesh[i] && dist2(yp[i], s) <= r2) ++count;
    ratios.push_back(static_cast<double>(count) / expected);
  }
  double mean = 0;
  for (double v : ratios) mean += v;
  mean /= static_cast<double>(ratios.size());
  double var = 0;
  for (double v : ratios) var += (v - mean) * (v - mean);
  var /= static_cast<double>(ratios.size());
  return std::sqrt(var);
}

std::pair<double, double> deviation_stats(const PointCloud& yp, const TriMesh& mesh) {
  if (mesh.n_faces() == 0) throw std::invalid_argument("deviation: empty mesh");
  if (yp.n() < 1) throw std::invalid_argument("deviation: empty cloud");
  MeshDistance dist(mesh);
  std::vector<double> d(yp.n());
  for (int64_t i = 0; i < yp.n(); ++i) d[i] = dist.distance(yp[i]);
  double mean = 0;
  for (double v : d) mean += v;
  mean /= static_cast<double>(d.size());
  double var = 0;
  for (double v : d) var += (v - mean) * (v - mean);
  var /= static_cast<double>(d.size());
  return {mean, std::sqrt(var)};
}

std::string MetricReport::to_json() const {
  nlohmann::json j;
  j["cd"] = cd;
  j["emd"] = emd;
  j["fscore"] = fscore;
  if (has_mesh_metrics) {
    j["nuc_p008"] = nuc;
    j["dev_mean"] = dev_mean;
    j["dev_std"] = dev_std;
  }
  j["emd_method"] = emd_method;
  j["flags"] = flags;
  return j.dump();
}

MetricReport evaluate_pair(const PointCloud& yp, const PointCloud& y, const TriMesh* mesh,
                           const SinkhornConfig& cfg, Rng& rng, int64_t emd_exact_max) {
  MetricReport r;
  r.cd = chamfer(yp, y);
  if (yp.n() == y.n() && yp.n() <= emd_exact_max) {
    r.emd = emd_exact(yp, y, emd_exact_max);
    r.emd_method = "exact";
  } else {
    SinkhornStats stats;
    r.emd = emd_approx(yp, y, cfg, &stats);
    r.emd_method = "sinkhorn";
    if (!stats.converged) r.flags.push_back("emd_sinkhorn_not_converged");
  }
  r.fscore = fscore(yp, y, default_fscore_tau(y));
  if (mesh) {
    r.has_mesh_metrics = true;
    r.nuc = nuc(yp, *mesh, 0.008, 100, rng);
    std::tie(r.dev_mean, r.dev_std) = deviation_stats(yp, *mesh);
  }
  return r;
}

}  // namespace pcu
