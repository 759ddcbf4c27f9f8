#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "pcu/geom.hpp"
#include "pcu/rng.hpp"
#include "pcu/tensor.hpp"

namespace pcu::testing {

inline PointCloud random_cloud(int64_t n, Rng& rng, double spread = 1.0) {
  PointCloud cloud;
  cloud.points.reserve(n);
  for (int64_t i = 0; i < n; ++i)
    cloud.points.push_back({rng.uniform(-spread, spread), rng.uniform(-spread, spread),
                            rng.uniform(-spread, spread)});
  return cloud;
}

inline Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true,
                            double spread = 1.0) {
  std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
  for (double& v : data) v = rng.uniform(-spread, spread);
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

// Max relative error between the analytic gradient of `eval` w.r.t. the
// entries of each tensor in `leaves` and central finite differences.
// `eval` must rebuild the graph from current leaf values and return the
// scalar loss tensor.
inline double fd_max_rel_error(std::vector<Tensor> leaves,
                               const std::function<Tensor()>& eval, double step = 1e-5) {
  Tensor loss = eval();
  for (auto& leaf : leaves) leaf.zero_grad();
  backward(loss);

  std::vector<std::vector<double>> analytic;
  for (auto& leaf : leaves)
    analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());

  double worst = 0;
  for (size_t t = 0; t < leaves.size(); ++t) {
    auto vals = leaves[t].mutable_data();
    for (size_t i = 0; i < vals.size(); ++i) {
      const double keep = vals[i];
      vals[i] = keep + step;
      const double up = eval().item();
      vals[i] = keep - step;
      const double down = eval().item();
      vals[i] = keep;
      const double fd = (up - down) / (2 * step);
      const double a = analytic[t][i];
      const double denom = std::max({std::abs(a), std::abs(fd), 1e-6});
      worst = std::max(worst, std::abs(a - fd) / denom);
    }
  }
  return worst;
}

inline std::array<Vec3, 3> rotation_xyz(double ax, double ay, double az) {
  const double cx = std::cos(ax), sx = std::sin(ax);
  const double cy = std::cos(ay), sy = std::sin(ay);
  const double cz = std::cos(az), sz = std::sin(az);
  // R = Rz * Ry * Rx, rows of the combined matrix
  return {Vec3{cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx},
          Vec3{sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx},
          Vec3{-sy, cy * sx, cy * cx}};
}

inline PointCloud rotate_cloud(const PointCloud& cloud, const std::array<Vec3, 3>& rot) {
  PointCloud out;
  out.points.reserve(cloud.points.size());
  for (const Vec3& p : cloud.points)
    out.points.push_back({rot[0].dot(p), rot[1].dot(p), rot[2].dot(p)});
  return out;
}

}  // namespace pcu::testing
