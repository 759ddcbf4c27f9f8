#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "pcu/data.hpp"
#include "pcu/metrics.hpp"

using namespace pcu;
using pcu::testing::random_cloud;

namespace {

double brute_emd(const PointCloud& a, const PointCloud& b) {
  std::vector<int64_t> perm(a.n());
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0;
    for (int64_t i = 0; i < a.n(); ++i) total += std::sqrt(dist2(a[i], b[perm[i]]));
    best = std::min(best, total / static_cast<double>(a.n()));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

double directed_mean_nn(const PointCloud& from, const PointCloud& to) {
  double acc = 0;
  for (const Vec3& p : from.points) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& q : to.points) best = std::min(best, dist2(p, q));
    acc += std::sqrt(best);
  }
  return acc / static_cast<double>(from.n());
}

}  // namespace

TEST_SUITE_BEGIN("metrics");

TEST_CASE("chamfer basics") {
  Rng rng(3);
  PointCloud a = random_cloud(14, rng);
  CHECK(chamfer(a, a) == 0.0);

  PointCloud o, x;
  o.points = {{0, 0, 0}};
  x.points = {{1, 0, 0}};
  CHECK(chamfer(o, x) == doctest::Approx(2.0));

  PointCloud b = random_cloud(9, rng);
  CHECK(chamfer(a, b) == doctest::Approx(chamfer(b, a)).epsilon(1e-15));
}

TEST_CASE("emd exact") {
  Rng rng(5);
  SUBCASE("identical sets cost zero") {
    PointCloud a = random_cloud(12, rng);
    CHECK(emd_exact(a, a) == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("two-point sets pick the best of both pairings") {
    PointCloud a, b;
    a.points = {{0, 0, 0}, {1, 0, 0}};
    b.points = {{0.1, 0, 0}, {0.9, 0, 0}};
    CHECK(emd_exact(a, b) == doctest::Approx(0.1));
  }
  SUBCASE("matches brute force on random sets") {
    for (int t = 0; t < 30; ++t) {
      const int64_t n = 2 + rng.uniform_int(6);
      PointCloud a = random_cloud(n, rng);
      PointCloud b = random_cloud(n, rng);
      CHECK(emd_exact(a, b) == doctest::Approx(brute_emd(a, b)).epsilon(1e-9));
    }
  }
  SUBCASE("rigid motion invariance") {
    PointCloud a = random_cloud(8, rng);
    PointCloud b = random_cloud(8, rng);
    const auto rot = pcu::testing::rotation_xyz(0.8, 0.3, -0.9);
    const double before = emd_exact(a, b);
    const double after = emd_exact(pcu::testing::rotate_cloud(a, rot),
                                   pcu::testing::rotate_cloud(b, rot));
    CHECK(std::abs(before - after) / std::max(before, 1e-12) < 1e-9);
  }
  SUBCASE("dominates the directed nearest-neighbor relaxation") {
    for (int t = 0; t < 20; ++t) {
      PointCloud a = random_cloud(7, rng);
      PointCloud b = random_cloud(7, rng);
      const double emd = emd_exact(a, b);
      CHECK(emd >= directed_mean_nn(a, b) - 1e-12);
      CHECK(emd >= directed_mean_nn(b, a) - 1e-12);
    }
  }
  SUBCASE("unequal sizes and oversized inputs are rejected") {
    PointCloud a = random_cloud(3, rng);
    PointCloud b = random_cloud(4, rng);
    CHECK_THROWS_AS(emd_exact(a, b), std::invalid_argument);
    CHECK_THROWS_AS(emd_exact(b, b, 3), std::invalid_argument);
  }
}

TEST_CASE("emd approx") {
  Rng rng(7);
  SinkhornConfig cfg;
  cfg.epsilon = 1e-3;
  cfg.max_iters = 2000;
  cfg.marginal_tol = 1e-8;
  SUBCASE("identical sets nearly zero") {
    PointCloud a = random_cloud(15, rng);
    CHECK(std::abs(emd_approx(a, a, cfg)) < 1e-4);
  }
  SUBCASE("within 5% of exact on small sets") {
    for (int t = 0; t < 15; ++t) {
      const int64_t n = 2 + rng.uniform_int(7);
      PointCloud a = normalize_unit_sphere(random_cloud(n, rng)).cloud;
      PointCloud b = normalize_unit_sphere(random_cloud(n, rng)).cloud;
      const double exact = emd_exact(a, b);
      CHECK(std::abs(emd_approx(a, b, cfg) - exact) / std::max(exact, 1e-9) < 0.05);
    }
  }
  SUBCASE("doubles when a singleton is pulled twice as far") {
    PointCloud a, b1, b2;
    a.points = {{0, 0, 0}};
    b1.points = {{0.5, 0, 0}};
    b2.points = {{1.0, 0, 0}};
    const double d1 = emd_approx(a, b1, cfg);
    const double d2 = emd_approx(a, b2, cfg);
    CHECK(std::abs(d2 - 2 * d1) / d2 < 0.05);
  }
}

TEST_CASE("fscore") {
  Rng rng(11);
  PointCloud y = random_cloud(10, rng);
  SUBCASE("identical clouds score 1") { CHECK(fscore(y, y, 0.01) == 1.0); }
  SUBCASE("distant clouds score 0") {
    PointCloud far = y;
    for (Vec3& p : far.points) p.x += 100;
    CHECK(fscore(far, y, 0.5) == 0.0);
  }
  SUBCASE("half precision, full recall gives 2/3") {
    PointCloud gt, pred;
    gt.points = {{0, 0, 0}};
    pred.points = {{0.001, 0, 0}, {5, 0, 0}};
    CHECK(fscore(pred, gt, 0.01) == doctest::Approx(2.0 / 3.0));
  }
}

TEST_CASE("nuc") {
  TriMesh plane = make_relief_plane(24, 0.0, 1.0);  // flat unit square [-1,1]^2
  Rng srng(13);
  SUBCASE("deterministic under a fixed seed") {
    PointCloud pts = sample_mesh_surface(plane, 400, srng);
    Rng r1(99), r2(99);
    CHECK(nuc(pts, plane, 0.008, 50, r1) == nuc(pts, plane, 0.008, 50, r2));
  }
  SUBCASE("clustered cloud scores strictly worse than a blue-noise cloud") {
    PointCloud dense = sample_mesh_surface(plane, 12000, srng);
    PointCloud blue = blue_noise_downsample(dense, 400);
    PointCloud clustered;
    for (const Vec3& p : dense.points) {
      if (clustered.n() >= 400) break;
      if (p.x < -0.5 && p.y < -0.5) clustered.points.push_back(p);
    }
    REQUIRE(clustered.n() >= 100);
    Rng r1(7), r2(7);
    const double n_blue = nuc(blue, plane, 0.02, 80, r1);
    const double n_clustered = nuc(clustered, plane, 0.02, 80, r2);
    CHECK(n_clustered > n_blue);
  }
  SUBCASE("equal counts in every disk give exactly zero") {
    // every disk counts the same number of points (here zero: the cloud
    // sits outside the mesh-proximal band), so the ratios are all equal
    PointCloud pts;
    Rng crng(23);
    for (int64_t i = 0; i < 100; ++i)
      pts.points.push_back({crng.uniform(-0.2, 0.2), crng.uniform(-0.2, 0.2), 5.0});
    Rng r(31);
    CHECK(nuc(pts, plane, 0.1, 20, r) == 0.0);
  }
  SUBCASE("empty mesh throws") {
    TriMesh empty;
    PointCloud pts;
    pts.points = {{0, 0, 0}};
    Rng r(1);
    CHECK_THROWS_AS(nuc(pts, empty, 0.1, 10, r), std::invalid_argument);
  }
}

TEST_CASE("deviation stats") {
  TriMesh tri;
  tri.vertices = {{-5, -5, 0}, {5, -5, 0}, {0, 5, 0}};
  tri.faces = {{0, 1, 2}};
  tri.finalize();
  SUBCASE("point at height h above a large triangle") {
    PointCloud p;
    p.points = {{0, 0, 0.7}};
    const auto [mean, sd] = deviation_stats(p, tri);
    CHECK(mean == doctest::Approx(0.7));
    CHECK(sd == doctest::Approx(0.0));
  }
  SUBCASE("points sampled on a mesh deviate by zero") {
    TriMesh torus = make_torus(24, 12);
    Rng rng(17);
    PointCloud pts = sample_mesh_surface(torus, 300, rng);
    const auto [mean, sd] = deviation_stats(pts, torus);
    CHECK(mean < 1e-9);
    CHECK(sd < 1e-9);
  }
}

TEST_CASE("metric report json has the fixed key names") {
  Rng rng(19);
  PointCloud y = random_cloud(30, rng);
  PointCloud yp = random_cloud(30, rng);
  SinkhornConfig cfg;
  Rng mrng(1);
  MetricReport rep = evaluate_pair(yp, y, nullptr, cfg, mrng);
  const std::string j = rep.to_json();
  CHECK(j.find("\"cd\"") != std::string::npos);
  CHECK(j.find("\"emd\"") != std::string::npos);
  CHECK(j.find("\"fscore\"") != std::string::npos);
  CHECK(rep.emd_method == "exact");

  TriMesh torus = make_torus(16, 8);
  Rng srng(2);
  PointCloud on_mesh = sample_mesh_surface(torus, 200, srng);
  MetricReport with_mesh = evaluate_pair(on_mesh, on_mesh, &torus, cfg, mrng);
  const std::string jm = with_mesh.to_json();
  CHECK(jm.find("\"nuc_p008\"") != std::string::npos);
  CHECK(jm.find("\"dev_mean\"") != std::string::npos);
  CHECK(jm.find("\"dev_std\"") != std::string::npos);
}

TEST_SUITE_END();
