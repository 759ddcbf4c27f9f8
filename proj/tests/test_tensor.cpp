#include <cmath>
#include <cstring>

#include "doctest.h"
#include "helpers.hpp"
#include "pcu/tensor.hpp"

using namespace pcu;
using pcu::testing::fd_max_rel_error;
using pcu::testing::random_tensor;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("linear identity weight") {
  Tensor x({1, 2}, {1, 2});
  Tensor w({2, 2}, {1, 0, 0, 1});
  Tensor y = linear(x, w);
  CHECK(y[0] == 1.0);
  CHECK(y[1] == 2.0);
}

TEST_CASE("linear with bias, hand evaluation") {
  Tensor x({1, 2}, {1, 1});
  Tensor w({2, 1}, {2, 3});
  Tensor b({1}, {1});
  CHECK(linear(x, w, b).item() == 6.0);
}

TEST_CASE("linear shape mismatch names both shapes") {
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor w({2, 2}, {1, 2, 3, 4});
  CHECK_THROWS_WITH_AS(linear(x, w), doctest::Contains("[2x3]"), std::invalid_argument);
}

TEST_CASE("gradient of sum(linear) w.r.t. w equals column sums of x") {
  Rng rng(7);
  Tensor x = random_tensor({4, 3}, rng, false);
  Tensor w = random_tensor({3, 2}, rng, true);
  backward(sum_all(linear(x, w)));
  for (int64_t k = 0; k < 3; ++k) {
    double col = 0;
    for (int64_t i = 0; i < 4; ++i) col += x[i * 3 + k];
    for (int64_t j = 0; j < 2; ++j) CHECK(w.grad()[k * 2 + j] == doctest::Approx(col).epsilon(1e-12));
  }
}

TEST_CASE("relu forward") {
  Tensor x({3}, {-1, 0, 2});
  Tensor y = relu(x);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.0);
  CHECK(y[2] == 2.0);

  Tensor neg({4}, {-3, -1, -2, -0.5});
  Tensor zeroed = relu(neg);
  for (double v : zeroed.data()) CHECK(v == 0.0);
}

TEST_CASE("relu gradient matches finite differences away from zero") {
  Rng rng(3);
  Tensor x = random_tensor({10}, rng);
  const double err = fd_max_rel_error({x}, [&] { return sum_all(mul(relu(x), x)); });
  CHECK(err < 1e-4);
}

TEST_CASE("group_gather basics") {
  Tensor x({2, 2}, {1, 2, 3, 4});
  SUBCASE("self indices replicate rows") {
    std::vector<int64_t> idx{0, 0, 0, 1, 1, 1};
    Tensor y = group_gather(x, idx, 3);
    CHECK(y.shape() == Shape{2, 3, 2});
    for (int j = 0; j < 3; ++j) {
      CHECK(y[j * 2] == 1.0);
      CHECK(y[6 + j * 2] == 3.0);
    }
  }
  SUBCASE("swap rows") {
    std::vector<int64_t> idx{1, 0};
    Tensor y = group_gather(x, idx, 1);
    CHECK(y[0] == 3.0);
    CHECK(y[2] == 1.0);
  }
  SUBCASE("out of range index throws") {
    std::vector<int64_t> idx{0, 2};
    CHECK_THROWS_AS(group_gather(x, idx, 1), std::out_of_range);
  }
}

TEST_CASE("group_gather backward counts row occurrences") {
  Tensor x({3, 1}, {5, 6, 7}, true);
  std::vector<int64_t> idx{0, 0, 1, 0, 2, 2};  // occurrences: 0 -> 3, 1 -> 1, 2 -> 2
  backward(sum_all(group_gather(x, idx, 2)));
  CHECK(x.grad()[0] == 3.0);
  CHECK(x.grad()[1] == 1.0);
  CHECK(x.grad()[2] == 2.0);

  Rng rng(11);
  Tensor xr = random_tensor({3, 2}, rng);
  const double err = fd_max_rel_error({xr}, [&] {
    return sum_all(mul(group_gather(xr, idx, 2), group_gather(xr, idx, 2)));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("reduce sum / max / mean") {
  Tensor ones({2, 3}, std::vector<double>(6, 1.0));
  Tensor s = reduce(ones, 1, Reduce::kSum);
  CHECK(s.shape() == Shape{2});
  CHECK(s[0] == 3.0);
  CHECK(s[1] == 3.0);

  Tensor x({3}, {1, 5, 5}, true);
  Tensor m = reduce(x, 0, Reduce::kMax);
  CHECK(m.item() == 5.0);
  backward(m);
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 1.0);  // ties routed to the lowest index
  CHECK(x.grad()[2] == 0.0);

  Tensor y({2, 2}, {1, 2, 3, 4});
  Tensor mean = reduce(y, 0, Reduce::kMean);
  Tensor sum = reduce(y, 0, Reduce::kSum);
  CHECK(mean[0] == sum[0] / 2);
  CHECK(mean[1] == sum[1] / 2);

  CHECK_THROWS_AS(reduce(y, 2, Reduce::kSum), std::invalid_argument);
}

TEST_CASE("combine add broadcasts the documented case") {
  // [n,1,3] shifted copies: every copy of point i moves by the same offset
  Tensor base({2, 1, 3}, {1, 2, 3, 4, 5, 6});
  Tensor offsets({2, 2, 3}, {0.1, 0.1, 0.1, 0.2, 0.2, 0.2, 0, 0, 0, 1, 1, 1});
  Tensor out = combine(offsets, base, Combine::kAdd);
  CHECK(out.shape() == Shape{2, 2, 3});
  CHECK(out[0] == doctest::Approx(1.1));
  CHECK(out[3] == doctest::Approx(1.2));
  CHECK(out[6] == 4.0);
  CHECK(out[9] == 5.0);

  Tensor a({1, 2}, {1, 2});
  Tensor b({1, 3}, {3, 4, 5});
  Tensor cat = combine(a, b, Combine::kConcatLastAxis);
  CHECK(cat.shape() == Shape{1, 5});
  CHECK(cat[2] == 3.0);

  Tensor zero = Tensor::zeros({1, 2});
  Tensor same = add(a, zero);
  CHECK(same[0] == 1.0);
  CHECK(same[1] == 2.0);

  Tensor bad({1, 4}, {1, 2, 3, 4});
  CHECK_THROWS_AS(add(a, bad), std::invalid_argument);  // 2 vs 4, neither is 1
}

TEST_CASE("broadcast add backward sums over the broadcast axis") {
  Rng rng(5);
  Tensor base = random_tensor({3, 1, 2}, rng);
  Tensor offs = random_tensor({3, 4, 2}, rng);
  const double err = fd_max_rel_error({base, offs}, [&] {
    return sum_all(mul(combine(offs, base, Combine::kAdd), combine(offs, base, Combine::kAdd)));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("backward of sum gives ones; accumulation doubles") {
  Tensor x({4}, {1, 2, 3, 4}, true);
  Tensor loss = sum_all(x);
  backward(loss);
  for (double g : x.grad()) CHECK(g == 1.0);
  backward(loss);
  for (double g : x.grad()) CHECK(g == 2.0);
}

TEST_CASE("two uses of a tensor add gradients") {
  Tensor x({2}, {3, 4}, true);
  backward(sum_all(add(x, x)));
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 2.0);
}

TEST_CASE("backward requires a scalar root") {
  Tensor x({2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(add(x, x)), std::invalid_argument);
}

TEST_CASE("composed graph gradient matches finite differences") {
  Rng rng(17);
  Tensor x = random_tensor({3, 3}, rng);
  Tensor w = random_tensor({3, 3}, rng);
  const double err = fd_max_rel_error({x, w}, [&] {
    return sum_all(mul(linear(x, w), relu(x)));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("forward evaluation is deterministic") {
  Rng rng(23);
  Tensor x = random_tensor({5, 4}, rng, false);
  Tensor w = random_tensor({4, 4}, rng, false);
  auto run = [&] {
    Tensor h = relu(linear(x, w));
    return sum_all(mul(h, h)).item();
  };
  const double a = run();
  const double b = run();
  CHECK(std::memcmp(&a, &b, sizeof(double)) == 0);
}

TEST_CASE("gradcheck across every primitive") {
  Rng rng(29);
  Tensor x = random_tensor({4, 3}, rng);
  Tensor w = random_tensor({3, 5}, rng);
  Tensor b = random_tensor({5}, rng);
  std::vector<int64_t> idx{1, 2, 0, 3, 2, 1, 0, 0};  // 4 rows, k = 2

  auto graph = [&] {
    Tensor h = linear(x, w, b);              // [4,5]
    Tensor g = group_gather(h, idx, 2);      // [4,2,5]
    Tensor mx = reduce(g, 1, Reduce::kMax);  // [4,5]
    Tensor sm = reduce(g, 1, Reduce::kMean);
    Tensor cat = combine(mx, sm, Combine::kConcatLastAxis);  // [4,10]
    Tensor act = relu(cat);
    Tensor resh = reshape(act, {8, 5});
    std::vector<int64_t> rows{0, 3, 5};
    return sum_all(mul(gather_rows(resh, rows), gather_rows(resh, rows)));
  };
  CHECK(fd_max_rel_error({x, w, b}, graph) < 1e-4);
}

TEST_SUITE_END();
