#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "pcu/net.hpp"

using namespace pcu;
using pcu::testing::fd_max_rel_error;
using pcu::testing::random_cloud;

namespace {

void zero_params(ParamStore& store) {
  for (auto& [name, t] : store)
    std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
}

NetConfig toy_config() {
  NetConfig cfg;
  cfg.k = 3;
  cfg.channels = 6;
  cfg.n_blocks = 3;
  cfg.meta_block_index = 2;
  cfg.r_max = 3;
  cfg.c_hidden = 5;
  return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("net");

TEST_CASE("scale vector layout") {
  SUBCASE("R = 2.5 with R_max = 16") {
    const auto sv = make_scale_vector(2.5, 16);
    REQUIRE(sv.size() == 32);
    CHECK(sv[0] == 1.5);
    CHECK(sv[1] == 2.5);
    CHECK(sv[2] == 0.5);
    CHECK(sv[3] == 2.5);
    CHECK(sv[4] == 0.0);
    CHECK(sv[5] == 2.5);
    for (size_t i = 6; i < 32; ++i) CHECK(sv[i] == -1.0);
  }
  SUBCASE("R = 2 with R_max = 16") {
    const auto sv = make_scale_vector(2.0, 16);
    CHECK(sv[0] == 1.0);
    CHECK(sv[1] == 2.0);
    CHECK(sv[2] == 0.0);
    CHECK(sv[3] == 2.0);
    for (size_t i = 4; i < 32; ++i) CHECK(sv[i] == -1.0);
  }
  SUBCASE("R = R_max leaves no padding") {
    const auto sv = make_scale_vector(16.0, 16);
    for (size_t i = 0; i < 32; i += 2) {
      CHECK(sv[i] == std::max(0.0, 16.0 - static_cast<double>(i / 2 + 1)));
      CHECK(sv[i + 1] == 16.0);
    }
  }
  SUBCASE("out-of-range R throws") {
    CHECK_THROWS_AS(make_scale_vector(1.0, 16), std::invalid_argument);
    CHECK_THROWS_AS(make_scale_vector(16.5, 16), std::invalid_argument);
  }
  SUBCASE("all-R variant fills every slot with R") {
    NetConfig cfg = NetConfig::tiny();
    cfg.scale_encoding = ScaleEncoding::kAllR;
    const auto sv = make_scale_vector(2.5, cfg);
    REQUIRE(sv.size() == static_cast<size_t>(2 * cfg.r_max));
    for (double v : sv) CHECK(v == 2.5);
  }
}

TEST_CASE("meta subnet output width is c_in*c_out and zero params give zero weights") {
  NetConfig cfg = NetConfig::tiny();
  Rng rng(5);
  ParamStore params = init_params(cfg, rng);
  const Tensor sv({1, cfg.scale_vector_len()}, make_scale_vector(2.0, cfg));
  Tensor w = meta_subnet_forward(sv, params, "block2.meta0", cfg);
  CHECK(w.shape() == Shape{cfg.channels, cfg.channels});
  CHECK(w.size() == cfg.channels * cfg.channels);

  zero_params(params);
  Tensor wz = meta_subnet_forward(sv, params, "block2.meta0", cfg);
  for (double v : wz.data()) CHECK(v == 0.0);
}

TEST_CASE("meta subnet default profile emits 128*128 weights") {
  NetConfig cfg;  // paper-scale defaults
  CHECK(cfg.channels == 128);
  CHECK(cfg.weight_numel() == 16384);
  CHECK(cfg.k == 8);
  CHECK(cfg.n_blocks == 22);
  CHECK(cfg.meta_block_index == 2);
  CHECK(cfg.r_max == 16);
}

TEST_CASE("meta subnet gradient vs finite differences") {
  NetConfig cfg = toy_config();
  Rng rng(7);
  ParamStore params = init_params(cfg, rng);
  const Tensor sv({1, cfg.scale_vector_len()}, make_scale_vector(2.0, cfg));
  Tensor fc1 = params.at("block2.meta0.fc1.w");
  const double err = fd_max_rel_error({fc1}, [&] {
    Tensor w = meta_subnet_forward(sv, params, "block2.meta0", cfg);
    return sum_all(mul(w, w));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("point CNN output shape and neighbor-permutation invariance") {
  NetConfig cfg = NetConfig::tiny();
  Rng rng(11);
  PointCloud cloud = random_cloud(20, rng);
  ParamStore params = init_params(cfg, rng);
  KnnGraph graph = build_knn(cloud, cfg.k);
  Tensor x = to_tensor(cloud);
  Tensor f = point_cnn_forward(x, graph, params, cfg);
  CHECK(f.shape() == Shape{20, cfg.channels});

  // max over neighbors is symmetric: permuting a row of the adjacency
  // table leaves the features unchanged
  KnnGraph shuffled = graph;
  std::reverse(shuffled.neighbors.begin(), shuffled.neighbors.begin() + cfg.k);
  Tensor f2 = point_cnn_forward(x, shuffled, params, cfg);
  for (int64_t j = 0; j < cfg.channels; ++j)
    CHECK(f2[j] == doctest::Approx(f[j]).epsilon(1e-12));
}

TEST_CASE("rgc block with zero weights is the identity; shape preserved") {
  NetConfig cfg = NetConfig::tiny();
  Rng rng(13);
  PointCloud cloud = random_cloud(12, rng);
  KnnGraph graph = build_knn(cloud, cfg.k);
  Tensor f_in = pcu::testing::random_tensor({12, cfg.channels}, rng, false);
  Tensor wz = Tensor::zeros({cfg.channels, cfg.channels});
  Tensor out = rgc_forward(f_in, graph, wz, wz);
  CHECK(out.shape() == f_in.shape());
  for (int64_t i = 0; i < out.size(); ++i) CHECK(out[i] == f_in[i]);
}

TEST_CASE("rgc neighbor branch sums duplicate self neighbors") {
  // k duplicates of the sole feature row: neighbor sum equals k * f
  NetConfig cfg = NetConfig::tiny();
  PointCloud cloud;
  cloud.points = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}, {1, 1, 1}};
  KnnGraph graph = build_knn(cloud, 3);
  Rng rng(17);
  Tensor f_in = pcu::testing::random_tensor({4, cfg.channels}, rng, false);
  Tensor w_id = Tensor::zeros({cfg.channels, cfg.channels});
  for (int64_t i = 0; i < cfg.channels; ++i) w_id.mutable_data()[i * cfg.channels + i] = 1.0;
  Tensor wz = Tensor::zeros({cfg.channels, cfg.channels});
  // center branch zero, neighbor identity: out = relu(sum of neighbors) + f
  Tensor out = rgc_forward(f_in, graph, wz, w_id);
  // point 3's neighbors are the three coincident points 0,1,2
  for (int64_t j = 0; j < cfg.channels; ++j) {
    const double expect =
        std::max(0.0, f_in[0 * cfg.channels + j] + f_in[1 * cfg.channels + j] +
                          f_in[2 * cfg.channels + j]) +
        f_in[3 * cfg.channels + j];
    CHECK(out[3 * cfg.channels + j] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("meta rgc: different scales produce different outputs, zero params the identity") {
  NetConfig cfg = NetConfig::tiny();
  Rng rng(19);
  PointCloud cloud = random_cloud(15, rng);
  KnnGraph graph = build_knn(cloud, cfg.k);
  ParamStore params = init_params(cfg, rng);
  Tensor f_in = pcu::testing::random_tensor({15, cfg.channels}, rng, false);

  const Tensor sv2({1, cfg.scale_vector_len()}, make_scale_vector(2.0, cfg));
  const Tensor sv4({1, cfg.scale_vector_len()}, make_scale_vector(4.0, cfg));
  Tensor o2 = meta_rgc_forward(f_in, graph, sv2, params, "block2", cfg);
  Tensor o4 = meta_rgc_forward(f_in, graph, sv4, params, "block2", cfg);
  double max_diff = 0;
  for (int64_t i = 0; i < o2.size(); ++i) max_diff = std::max(max_diff, std::abs(o2[i] - o4[i]));
  CHECK(max_diff > 1e-9);

  zero_params(params);
  Tensor oz = meta_rgc_forward(f_in, graph, sv2, params, "block2", cfg);
  for (int64_t i = 0; i < oz.size(); ++i) CHECK(oz[i] == f_in[i]);
}

TEST_CASE("unpool with zero weights replicates each input point R_max times, contiguously") {
  NetConfig cfg = NetConfig::tiny();
  Rng rng(23);
  PointCloud cloud = random_cloud(10, rng);
  KnnGraph graph = build_knn(cloud, cfg.k);
  ParamStore params = init_params(cfg, rng);
  zero_params(params);
  Tensor f = pcu::testing::random_tensor({10, cfg.channels}, rng, false);
  Tensor out = unpool_forward(f, to_tensor(cloud), graph, params, cfg);
  REQUIRE(out.shape() == Shape{10 * cfg.r_max, 3});
  for (int64_t i = 0; i < 10; ++i)
    for (int64_t c = 0; c < cfg.r_max; ++c) {
      const int64_t row = i * cfg.r_max + c;
      CHECK(out[row * 3 + 0] == cloud[i].x);
      CHECK(out[row * 3 + 1] == cloud[i].y);
      CHECK(out[row * 3 + 2] == cloud[i].z);
    }
}

TEST_CASE("forward cardinality floor(R*n) across the scale grid") {
  NetConfig cfg = NetConfig::tiny();
  Rng rng(29);
  ParamStore params = init_params(cfg, rng);
  PointCloud cloud = random_cloud(40, rng);
  for (double r = 1.1; r <= 4.0 + 1e-9; r += 0.1) {
    const double rr = std::min(r, 4.0);
    const auto out = upsample(cloud, rr, params, cfg);
    CHECK(out.n() == static_cast<int64_t>(std::floor(rr * 40)));
  }
}

TEST_CASE("meta scale override changes coordinates but not cardinality") {
  NetConfig cfg = NetConfig::tiny();
  Rng rng(31);
  ParamStore params = init_params(cfg, rng);
  PointCloud cloud = random_cloud(25, rng);
  const auto base = upsample(cloud, 2.0, params, cfg);
  const auto overridden = upsample(cloud, 2.0, params, cfg, 4.0);
  CHECK(base.n() == overridden.n());
  double max_diff = 0;
  for (int64_t i = 0; i < base.n(); ++i)
    max_diff = std::max(max_diff, (base[i] - overridden[i]).norm());
  CHECK(max_diff > 1e-9);
}

TEST_CASE("permutation of the input reproduces the output as a point set") {
  NetConfig cfg = NetConfig::tiny();
  Rng rng(37);
  ParamStore params = init_params(cfg, rng);
  PointCloud cloud = random_cloud(20, rng);

  PointCloud permuted;
  std::vector<int64_t> perm(cloud.n());
  for (int64_t i = 0; i < cloud.n(); ++i) perm[i] = i;
  for (int64_t i = cloud.n() - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(i + 1)]);
  for (int64_t i : perm) permuted.points.push_back(cloud[i]);

  auto sorted_rows = [](const PointCloud& c) {
    std::vector<std::array<double, 3>> rows;
    for (const Vec3& p : c.points) rows.push_back({p.x, p.y, p.z});
    std::sort(rows.begin(), rows.end());
    return rows;
  };
  const auto a = sorted_rows(upsample(cloud, 2.5, params, cfg));
  const auto b = sorted_rows(upsample(permuted, 2.5, params, cfg));
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i)
    for (int d = 0; d < 3; ++d) CHECK(a[i][d] == doctest::Approx(b[i][d]).epsilon(1e-12));
}

TEST_CASE("scale sensitivity: R=2 vs R=4 outputs differ") {
  NetConfig cfg = NetConfig::tiny();
  Rng rng(41);
  ParamStore params = init_params(cfg, rng);
  PointCloud cloud = random_cloud(30, rng);
  const auto dense2 = metapu_forward(cloud, 2.0, params, cfg).dense;
  const auto dense4 = metapu_forward(cloud, 4.0, params, cfg).dense;
  double max_diff = 0;
  for (int64_t i = 0; i < dense2.size(); ++i)
    max_diff = std::max(max_diff, std::abs(dense2[i] - dense4[i]));
  CHECK(max_diff > 1e-9);
}

TEST_CASE("gradient flows to every parameter") {
  NetConfig cfg = toy_config();
  Rng rng(45);  // generic: no fully dead relu channels at this seed
  ParamStore params = init_params(cfg, rng);
  PointCloud cloud = random_cloud(8, rng);
  ForwardResult res = metapu_forward(cloud, 2.0, params, cfg);
  backward(sum_all(mul(res.output, res.output)));
  for (const auto& [name, t] : params) {
    REQUIRE_MESSAGE(t.has_grad(), name);
    double norm = 0;
    for (double g : t.grad()) norm += g * g;
    CHECK_MESSAGE(norm > 0, name);
  }
}

TEST_CASE("end-to-end gradient matches finite differences on a toy") {
  NetConfig cfg = toy_config();
  // seed chosen away from discrete-selection boundaries (FPS / knn / max
  // ties), where central differences are valid
  Rng rng(45);
  ParamStore params = init_params(cfg, rng);
  PointCloud cloud = random_cloud(5, rng);

  // weight the output so the check is generic
  std::vector<double> mix(static_cast<size_t>(std::floor(2.0 * 5) * 3));
  for (double& v : mix) v = rng.uniform(-1, 1);

  std::vector<Tensor> leaves;
  for (auto& [name, t] : params)
    if (name.find("fc4") == std::string::npos) leaves.push_back(t);  // keep the check fast

  const double err = fd_max_rel_error(leaves, [&] {
    ForwardResult res = metapu_forward(cloud, 2.0, params, cfg);
    Tensor m(Shape{res.output.dim(0), 3}, std::vector<double>(mix));
    return sum_all(mul(res.output, m));
  });
  CHECK(err < 1e-3);
}

TEST_CASE("init: deterministic, bounded, tiny profile parameter count") {
  NetConfig cfg = NetConfig::tiny();
  Rng rng_a(51), rng_b(51);
  ParamStore a = init_params(cfg, rng_a);
  ParamStore b = init_params(cfg, rng_b);
  int64_t total = 0;
  for (const auto& [name, t] : a) {
    const Tensor& other = b.at(name);
    REQUIRE(t.shape() == other.shape());
    for (int64_t i = 0; i < t.size(); ++i) {
      CHECK(t[i] == other[i]);
      CHECK(std::abs(t[i]) < 1.0);
      CHECK(std::isfinite(t[i]));
    }
    total += t.size();
  }
  CHECK(total < 3'000'000);
}

TEST_CASE("receptive field") {
  NetConfig cfg = NetConfig::tiny();
  Rng rng(53);
  PointCloud cloud = random_cloud(12, rng);

  SUBCASE("zero weights: field is exactly the parent input point") {
    ParamStore params = init_params(cfg, rng);
    zero_params(params);
    const int64_t parent = 7;
    ReceptiveField rf = receptive_field(cloud, 2.0, params, cfg, parent * cfg.r_max + 1);
    CHECK(rf.indices == std::set<int64_t>{parent});
  }
  SUBCASE("field grows monotonically as the threshold drops") {
    ParamStore params = init_params(cfg, rng);
    ReceptiveField rf = receptive_field(cloud, 2.0, params, cfg, 5);
    CHECK(!rf.indices.empty());
    auto count_above = [&](double thr) {
      int64_t c = 0;
      for (double m : rf.magnitudes)
        if (m > thr) ++c;
      return c;
    };
    int64_t prev = 0;
    for (double thr : {rf.threshold * 4, rf.threshold, rf.threshold / 4, 0.0}) {
      const int64_t cur = count_above(thr);
      CHECK(cur >= prev);
      prev = cur;
    }
  }
}

TEST_CASE("forward rejects bad inputs") {
  NetConfig cfg = NetConfig::tiny();
  Rng rng(59);
  ParamStore params = init_params(cfg, rng);
  PointCloud small = random_cloud(5, rng);  // n <= k
  CHECK_THROWS_AS(upsample(small, 2.0, params, cfg), std::invalid_argument);
  PointCloud ok = random_cloud(12, rng);
  CHECK_THROWS_AS(upsample(ok, 5.0, params, cfg), std::invalid_argument);  // R > R_max
  CHECK_THROWS_AS(upsample(ok, 1.0, params, cfg), std::invalid_argument);
}

TEST_SUITE_END();
