#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "pcu/rng.hpp"

namespace pcu {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm2() const { return dot(*this); }
  double norm() const;
};

double dist2(const Vec3& a, const Vec3& b);

struct PointCloud {
  std::vector<Vec3> points;

  int64_t n() const { return static_cast<int64_t>(points.size()); }
  const Vec3& operator[](int64_t i) const { return points[i]; }
  Vec3& operator[](int64_t i) { return points[i]; }
};

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int64_t, 3>> faces;
  std::vector<double> face_areas;  // filled by finalize()

  double total_area = 0;
  void finalize();  // computes per-face areas; validates indices
  int64_t n_faces() const { return static_cast<int64_t>(faces.size()); }
};

/// Exact k nearest neighbors (self excluded), rows in nondecreasing
/// distance, ties by lower index.
struct KnnGraph {
  int64_t k = 0;
  std::vector<int64_t> neighbors;  // n*k row-major

  std::span<const int64_t> row(int64_t i) const {
    return {neighbors.data() + i * k, static_cast<size_t>(k)};
  }
};

KnnGraph build_knn(const PointCloud& cloud, int64_t k);

std::vector<int64_t> farthest_point_sample(const PointCloud& cloud, int64_t m,
                                           int64_t seed_index);
std::vector<int64_t> farthest_point_sample(std::span<const Vec3> pts, int64_t m,
                                           int64_t seed_index);

std::vector<int64_t> ball_query(const PointCloud& cloud, const Vec3& center, double r);

struct NormalizeResult {
  PointCloud cloud;
  Vec3 centroid;
  double radius = 1.0;
};
NormalizeResult normalize_unit_sphere(const PointCloud& cloud);
PointCloud denormalize(const PointCloud& cloud, const Vec3& centroid, double radius);

PointCloud sample_mesh_surface(const TriMesh& mesh, int64_t m, Rng& rng);

/// Blue-noise style subset: farthest-point selection over the dense set,
/// seeded at index 0.
PointCloud blue_noise_downsample(const PointCloud& cloud, int64_t m);

double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Exact nearest point-to-mesh distance with an AABB hierarchy for pruning.
class MeshDistance {
 public:
  explicit MeshDistance(const TriMesh& mesh);
  double distance(const Vec3& p) const;

 private:
  struct BvhNode {
    Vec3 lo, hi;
    int32_t left = -1, right = -1;  // interior when >= 0
    int32_t first = 0, count = 0;   // leaf: range in face_order_
  };
  const TriMesh& mesh_;
  std::vector<BvhNode> nodes_;
  std::vector<int32_t> face_order_;
  int32_t build(std::vector<int32_t>& faces, int32_t begin, int32_t end,
                const std::vector<Vec3>& centroids);
};

}  // namespace pcu
