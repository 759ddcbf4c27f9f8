#include "pcu/geom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace pcu {

double Vec3::norm() const { return std::sqrt(norm2()); }

double dist2(const Vec3& a, const Vec3& b) { return (a - b).norm2(); }

void TriMesh::finalize() {
  const int64_t nv = static_cast<int64_t>(vertices.size());
  face_areas.resize(faces.size());
  total_area = 0;
  for (size_t f = 0; f < faces.size(); ++f) {
    for (int64_t vi : faces[f])
      if (vi < 0 || vi >= nv)
        throw std::out_of_range("mesh: face vertex index " + std::to_string(vi) +
                                " out of [0," + std::to_string(nv) + ")");
    const Vec3& a = vertices[faces[f][0]];
    const Vec3& b = vertices[faces[f][1]];
    const Vec3& c = vertices[faces[f][2]];
    face_areas[f] = 0.5 * (b - a).cross(c - a).norm();
    total_area += face_areas[f];
  }
}

KnnGraph build_knn(const PointCloud& cloud, int64_t k) {
  const int64_t n = cloud.n();
  if (k < 1 || k >= n)
    throw std::invalid_argument("build_knn: k=" + std::to_string(k) +
                                " must satisfy 1 <= k < n=" + std::to_string(n));
  KnnGraph g;
  g.k = k;
  g.neighbors.resize(n * k);
  std::vector<std::pair<double, int64_t>> cand(n - 1);
  for (int64_t i = 0; i < n; ++i) {
    int64_t c = 0;
    for (int64_t j = 0; j < n; ++j) {
      if (j == i) continue;
      cand[c++] = {dist2(cloud[i], cloud[j]), j};
    }
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
    for (int64_t j = 0; j < k; ++j) g.neighbors[i * k + j] = cand[j].second;
  }
  return g;
}

std::vector<int64_t> farthest_point_sample(const PointCloud& cloud, int64_t m,
                                           int64_t seed_index) {
  return farthest_point_sample(std::span<const Vec3>(cloud.points), m, seed_index);
}

std::vector<int64_t> farthest_point_sample(std::span<const Vec3> pts, int64_t m,
                                           int64_t seed_index) {
  const int64_t n = static_cast<int64_t>(pts.size());
  if (m < 1 || m > n)
    throw std::invalid_argument("farthest_point_sample: m=" + std::to_string(m) +
                                " out of [1," + std::to_string(n) + "]");
  if (seed_index < 0 || seed_index >= n)
    throw std::invalid_argument("farthest_point_sample: invalid seed index");

  std::vector<int64_t> selected;
  selected.reserve(m);
  selected.push_back(seed_index);
  std::vector<double> d2(n);
  for (int64_t i = 0; i < n; ++i) d2[i] = dist2(pts[i], pts[seed_index]);
  while (static_cast<int64_t>(selected.size()) < m) {
    int64_t best = 0;
    for (int64_t i = 1; i < n; ++i)
      if (d2[i] > d2[best]) best = i;  // ties keep the lowest index
    selected.push_back(best);
    for (int64_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], dist2(pts[i], pts[best]));
  }
  return selected;
}

std::vector<int64_t> ball_query(const PointCloud& cloud, const Vec3& center, double r) {
  if (r <= 0) throw std::invalid_argument("ball_query: radius must be positive");
  std::vector<int64_t> out;
  const double r2 = r * r;
  for (int64_t i = 0; i < cloud.n(); ++i)
    if (dist2(cloud[i], center) <= r2) out.push_back(i);
  return out;
}

NormalizeResult normalize_unit_sphere(const PointCloud& cloud) {
  if (cloud.n() < 1) throw std::invalid_argument("normalize: empty cloud");
  NormalizeResult res;
  Vec3 c{0, 0, 0};
  for (const Vec3& p : cloud.points) c += p;
  const double inv_n = 1.0 / static_cast<double>(cloud.n());
  res.centroid = c * inv_n;
  double max_norm = 0;
  for (const Vec3& p : cloud.points) max_norm = std::max(max_norm, (p - res.centroid).norm());
  res.radius = max_norm > 0 ? max_norm : 1.0;
  res.cloud.points.reserve(cloud.points.size());
  const double inv_r = 1.0 / res.radius;
  for (const Vec3& p : cloud.points) res.cloud.points.push_back((p - res.centroid) * inv_r);
  return res;
}

PointCloud denormalize(const PointCloud& cloud, const Vec3& centroid, double radius) {
  PointCloud out;
  out.points.reserve(cloud.points.size());
  for (const Vec3& p : cloud.points) out.points.push_back(p * radius + centroid);
  return out;
}

PointCloud sample_mesh_surface(const TriMesh& mesh, int64_t m, Rng& rng) {
  if (mesh.n_faces() == 0 || mesh.total_area <= 0)
    throw std::invalid_argument("sample_mesh_surface: empty mesh");
  if (m < 1) throw std::invalid_argument("sample_mesh_surface: m must be >= 1");

  std::vector<double> cum(mesh.n_faces());
  std::partial_sum(mesh.face_areas.begin(), mesh.face_areas.end(), cum.begin());

  PointCloud out;
  out.points.reserve(m);
  for (int64_t s = 0; s < m; ++s) {
    const double u = rng.uniform() * mesh.total_area;
    const auto it = std::upper_bound(cum.begin(), cum.end(), u);
    const int64_t f = std::min<int64_t>(it - cum.begin(), mesh.n_faces() - 1);
    double b1 = rng.uniform(), b2 = rng.uniform();
    if (b1 + b2 > 1.0) {
      b1 = 1.0 - b1;
      b2 = 1.0 - b2;
    }
    const Vec3& a = mesh.vertices[mesh.faces[f][0]];
    const Vec3& b = mesh.vertices[mesh.faces[f][1]];
    const Vec3& c = mesh.vertices[mesh.faces[f][2]];
    out.points.push_back(a + (b - a) * b1 + (c - a) * b2);
  }
  return out;
}

PointCloud blue_noise_downsample(const PointCloud& cloud, int64_t m) {
  if (m > cloud.n())
    throw std::invalid_argument("blue_noise_downsample: m=" + std::to_string(m) + " > n=" +
                                std::to_string(cloud.n()));
  const auto idx = farthest_point_sample(cloud, m, 0);
  PointCloud out;
  out.points.reserve(m);
  for (int64_t i : idx) out.points.push_back(cloud[i]);
  return out;
}

double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 e0 = b - a, e1 = c - a, d = a - p;
  const double a00 = e0.dot(e0), a01 = e0.dot(e1), a11 = e1.dot(e1);
  const double b0 = e0.dot(d), b1 = e1.dot(d);
  const double det = a00 * a11 - a01 * a01;
  if (!(det > 1e-14 * a00 * a11) || a00 == 0 || a11 == 0)
    throw std::invalid_argument("point_triangle_distance: degenerate triangle");

  // Eberly region decomposition over (s, t) with closest = a + s e0 + t e1.
  double s = a01 * b1 - a11 * b0;
  double t = a01 * b0 - a00 * b1;
  if (s + t <= det) {
    if (s < 0) {
      if (t < 0) {  // region 4
        if (b0 < 0) {
          t = 0;
          s = std::clamp(-b0 / a00, 0.0, 1.0);
        } else {
          s = 0;
          t = std::clamp(-b1 / a11, 0.0, 1.0);
        }
      } else {  // region 3
        s = 0;
        t = std::clamp(-b1 / a11, 0.0, 1.0);
      }
    } else if (t < 0) {  // region 5
      t = 0;
      s = std::clamp(-b0 / a00, 0.0, 1.0);
    } else {  // region 0
      s /= det;
      t /= det;
    }
  } else {
    if (s < 0) {  // region 2
      const double tmp0 = a01 + b0, tmp1 = a11 + b1;
      if (tmp1 > tmp0) {
        const double numer = tmp1 - tmp0, denom = a00 - 2 * a01 + a11;
        s = std::clamp(numer / denom, 0.0, 1.0);
        t = 1 - s;
      } else {
        s = 0;
        t = std::clamp(-b1 / a11, 0.0, 1.0);
      }
    } else if (t < 0) {  // region 6
      const double tmp0 = a01 + b1, tmp1 = a00 + b0;
      if (tmp1 > tmp0) {
        const double numer = tmp1 - tmp0, denom = a00 - 2 * a01 + a11;
        t = std::clamp(numer / denom, 0.0, 1.0);
        s = 1 - t;
      } else {
        t = 0;
        s = std::clamp(-b0 / a00, 0.0, 1.0);
      }
    } else {  // region 1
      const double numer = a11 + b1 - a01 - b0;
      if (numer <= 0) {
        s = 0;
      } else {
        const double denom = a00 - 2 * a01 + a11;
        s = std::clamp(numer / denom, 0.0, 1.0);
      }
      t = 1 - s;
    }
  }
  const Vec3 closest = a + e0 * s + e1 * t;
  return (closest - p).norm();
}

namespace {

double aabb_dist2(const Vec3& p, const Vec3& lo, const Vec3& hi) {
  const double dx = std::max({lo.x - p.x, 0.0, p.x - hi.x});
  const double dy = std::max({lo.y - p.y, 0.0, p.y - hi.y});
  const double dz = std::max({lo.z - p.z, 0.0, p.z - hi.z});
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace

MeshDistance::MeshDistance(const TriMesh& mesh) : mesh_(mesh) {
  if (mesh.n_faces() == 0) throw std::invalid_argument("mesh distance: empty mesh");
  std::vector<Vec3> centroids(mesh.n_faces());
  std::vector<int32_t> faces(mesh.n_faces());
  for (int32_t f = 0; f < mesh.n_faces(); ++f) {
    faces[f] = f;
    const auto& tri = mesh.faces[f];
    centroids[f] =
        (mesh.vertices[tri[0]] + mesh.vertices[tri[1]] + mesh.vertices[tri[2]]) * (1.0 / 3.0);
  }
  build(faces, 0, static_cast<int32_t>(faces.size()), centroids);
}

int32_t MeshDistance::build(std::vector<int32_t>& faces, int32_t begin, int32_t end,
                            const std::vector<Vec3>& centroids) {
  BvhNode node;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  node.lo = {kInf, kInf, kInf};
  node.hi = {-kInf, -kInf, -kInf};
  for (int32_t i = begin; i < end; ++i)
    for (int64_t vi : mesh_.faces[faces[i]]) {
      const Vec3& v = mesh_.vertices[vi];
      node.lo = {std::min(node.lo.x, v.x), std::min(node.lo.y, v.y), std::min(node.lo.z, v.z)};
      node.hi = {std::max(node.hi.x, v.x), std::max(node.hi.y, v.y), std::max(node.hi.z, v.z)};
    }

  const int32_t id = static_cast<int32_t>(nodes_.size());
  nodes_.push_back(node);
  if (end - begin <= 4) {
    nodes_[id].first = static_cast<int32_t>(face_order_.size());
    nodes_[id].count = end - begin;
    for (int32_t i = begin; i < end; ++i) face_order_.push_back(faces[i]);
    return id;
  }

  const Vec3 extent = node.hi - node.lo;
  int axis = 0;
  if (extent.y > extent.x) axis = 1;
  if (extent.z > (axis == 0 ? extent.x : extent.y)) axis = 2;
  const int32_t mid = (begin + end) / 2;
  std::nth_element(faces.begin() + begin, faces.begin() + mid, faces.begin() + end,
                   [&](int32_t fa, int32_t fb) {
                     const Vec3 &ca = centroids[fa], &cb = centroids[fb];
                     const double va = axis == 0 ? ca.x : axis == 1 ? ca.y : ca.z;
                     const double vb = axis == 0 ? cb.x : axis == 1 ? cb.y : cb.z;
                     return va < vb || (va == vb && fa < fb);
                   });
  const int32_t l = build(faces, begin, mid, centroids);
  const int32_t r = build(faces, mid, end, centroids);
  nodes_[id].left = l;
  nodes_[id].right = r;
  return id;
}

double MeshDistance::distance(const Vec3& p) const {
  double best = std::numeric_limits<double>::infinity();
  std::vector<int32_t> stack{0};
  while (!stack.empty()) {
    const int32_t id = stack.back();
    stack.pop_back();
    const BvhNode& node = nodes_[id];
    if (aabb_dist2(p, node.lo, node.hi) > best * best) continue;
    if (node.left < 0) {
      for (int32_t i = node.first; i < node.first + node.count; ++i) {
        const auto& tri = mesh_.faces[face_order_[i]];
        best = std::min(best, point_triangle_distance(p, mesh_.vertices[tri[0]],
                                                      mesh_.vertices[tri[1]],
                                                      mesh_.vertices[tri[2]]));
      }
    } else {
      // visit the nearer child first
      const double dl = aabb_dist2(p, nodes_[node.left].lo, nodes_[node.left].hi);
      const double dr = aabb_dist2(p, nodes_[node.right].lo, nodes_[node.right].hi);
      if (dl < dr) {
        stack.push_back(node.right);
        stack.push_back(node.left);
      } else {
        stack.push_back(node.left);
        stack.push_back(node.right);
      }
    }
  }
  return best;
}

}  // namespace pcu
