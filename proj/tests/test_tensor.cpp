#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "master/gradcheck.hpp"
#include "master/init.hpp"
#include "master/ops.hpp"
#include "oracles.hpp"

using namespace master;

namespace {
Tensor random_tensor(Shape shape, std::uint64_t seed, double sigma = 1.0) {
  std::mt19937_64 rng(seed);
  return rand_normal(std::move(shape), sigma, rng);
}
}  // namespace

TEST_CASE("tensor basics and invariants") {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.size() == 6);
  CHECK(t.extent(1) == 3);
  CHECK(t.all_finite());
  t[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(t.all_finite());
  CHECK_THROWS_AS(t.check_finite("t"), ContractError);

  CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), ShapeError);
  CHECK_THROWS_AS(Tensor({2}, {1.0, 2.0}).item(), ContractError);
}

TEST_CASE("grad buffer matches data shape") {
  Tensor t({4}, {1, 2, 3, 4});
  CHECK_FALSE(t.has_grad());
  t.grad_data()[2] = 5.0;
  CHECK(t.has_grad());
  CHECK(t.grad().size() == 4);
  t.zero_grad();
  CHECK(t.grad()[2] == 0.0);
}

TEST_CASE("matmul identity") {
  Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor m = random_tensor({3, 3}, 1);
  Tensor y = matmul(eye, m);
  CHECK(oracles::max_abs_diff(y, m) == 0.0);
}

TEST_CASE("matmul hand-checked 2x2") {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 1}, {0, 1});
  Tensor y = matmul(a, b);
  CHECK(y[0] == 2.0);
  CHECK(y[1] == 4.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
  Tensor a = random_tensor({5, 7}, 2);
  Tensor b = random_tensor({7, 3}, 3);
  CHECK(oracles::max_abs_diff(matmul(a, b), oracles::naive_matmul(a, b)) < 1e-12);
}

TEST_CASE("matmul shape error names both shapes") {
  Tensor a({2, 3});
  Tensor b({4, 2});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), ShapeError);
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[4x2]"), ShapeError);
}

TEST_CASE("softmax symmetry and stability") {
  Tensor flat({4}, {0, 0, 0, 0});
  Tensor y = softmax(flat, 0);
  for (int i = 0; i < 4; ++i) CHECK(y[i] == doctest::Approx(0.25).epsilon(1e-12));

  Tensor big({2}, {1000, 1000});
  Tensor z = softmax(big, 0);
  CHECK(z.all_finite());
  CHECK(z[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("softmax matches extended-precision oracle") {
  Tensor x({3}, {1, 2, 3});
  Tensor y = softmax(x, 0);
  const auto ref = oracles::softmax_ref({1, 2, 3});
  for (int i = 0; i < 3; ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("softmax properties: sums to one, shift invariant") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = rand_normal({4, 6}, 3.0, rng);
    Tensor y = softmax(x, 1);
    for (int r = 0; r < 4; ++r) {
      double s = 0;
      for (int c = 0; c < 6; ++c) s += y[r * 6 + c];
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
    Tensor shifted = add_scalar(x, 17.5);
    CHECK(oracles::max_abs_diff(softmax(shifted, 1), y) < 1e-9);
  }
}

TEST_CASE("softmax over an interior axis") {
  Tensor x = random_tensor({2, 3, 4}, 5);
  Tensor y = softmax(x, 1);
  for (int o = 0; o < 2; ++o) {
    for (int i = 0; i < 4; ++i) {
      double s = 0;
      std::vector<double> slice;
      for (int k = 0; k < 3; ++k) slice.push_back(x[(o * 3 + k) * 4 + i]);
      const auto ref = oracles::softmax_ref(slice);
      for (int k = 0; k < 3; ++k) {
        s += y[(o * 3 + k) * 4 + i];
        CHECK(y[(o * 3 + k) * 4 + i] == doctest::Approx(ref[static_cast<std::size_t>(k)]));
      }
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
  }
  CHECK_THROWS_AS(softmax(x, 3), ShapeError);
}

TEST_CASE("layer_norm trivial cases") {
  Tensor ones({4}, {1, 1, 1, 1});
  Tensor gamma = Tensor::full({4}, 1.0);
  Tensor beta({4});
  Tensor y = layer_norm(ones, gamma, beta, 0);
  for (int i = 0; i < 4; ++i) CHECK(y[i] == doctest::Approx(0.0).epsilon(1e-12));

  Tensor beta5 = Tensor::full({4}, 5.0);
  Tensor z = layer_norm(ones, gamma, beta5, 0);
  for (int i = 0; i < 4; ++i) CHECK(z[i] == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("layer_norm matches two-pass oracle") {
  std::mt19937_64 rng(7);
  Tensor x = rand_normal({6}, 2.0, rng);
  Tensor gamma = rand_normal({6}, 1.0, rng);
  Tensor beta = rand_normal({6}, 1.0, rng);
  Tensor y = layer_norm(x, gamma, beta, 0);
  const auto ref = oracles::layer_norm_ref(
      {x.data(), x.data() + 6}, {gamma.data(), gamma.data() + 6}, {beta.data(), beta.data() + 6});
  for (int i = 0; i < 6; ++i) CHECK(std::abs(y[i] - ref[static_cast<std::size_t>(i)]) < 1e-10);
}

TEST_CASE("spatial_norm normalizes each channel over its grid") {
  std::mt19937_64 rng(77);
  Tensor x = rand_normal({3, 4, 5}, 2.5, rng);
  Tensor gamma = Tensor::full({3}, 1.0);
  Tensor beta({3});
  Tensor y = spatial_norm(x, gamma, beta);
  CHECK(y.shape() == x.shape());
  for (int c = 0; c < 3; ++c) {
    double mean = 0, var = 0;
    for (int p = 0; p < 20; ++p) mean += y[c * 20 + p];
    mean /= 20;
    for (int p = 0; p < 20; ++p) var += (y[c * 20 + p] - mean) * (y[c * 20 + p] - mean);
    var /= 20;
    CHECK(std::abs(mean) < 1e-12);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  }
  // constant channel stays finite and collapses to beta
  Tensor flat = Tensor::full({2, 2, 2}, 3.0);
  Tensor g2 = Tensor::full({2}, 1.0);
  Tensor b2({2}, {5.0, -1.0});
  Tensor z = spatial_norm(flat, g2, b2);
  CHECK(z.all_finite());
  CHECK(z[0] == 5.0);
  CHECK(z[4] == -1.0);
  CHECK_THROWS_AS(spatial_norm(Tensor({2, 2}), g2, b2), ShapeError);
}

TEST_CASE("relu values and subgradient at zero") {
  Tensor x({3}, {-1, 0, 2});
  Tensor y = relu(x);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.0);
  CHECK(y[2] == 2.0);

  Tensor neg({3}, {-5, -1, -0.5});
  Tensor z = relu(neg);
  for (int i = 0; i < 3; ++i) CHECK(z[i] == 0.0);

  // gradient under unit upstream: [0, 1] at inputs [-1, 2], and 0 at 0
  Tensor in({3}, {-1, 0, 2});
  in.set_requires_grad(true);
  GradTape tape;
  {
    TapeScope scope(tape);
    Tensor s = sum(relu(in));
    tape.backward(s);
  }
  CHECK(in.grad()[0] == 0.0);
  CHECK(in.grad()[1] == 0.0);
  CHECK(in.grad()[2] == 1.0);
}

TEST_CASE("conv2d 1x1 identity channel mixing") {
  Tensor x = random_tensor({2, 4, 5}, 9);
  Tensor w({2, 2, 1, 1}, {1, 0, 0, 1});
  Tensor b({2});
  Tensor y = conv2d(x, w, b);
  CHECK(oracles::max_abs_diff(y, x) == 0.0);
}

TEST_CASE("conv2d all-ones 3x3 on constant image") {
  const double c = 0.7;
  Tensor x = Tensor::full({1, 5, 6}, c);
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor b({1});
  Tensor y = conv2d(x, w, b, {1, 1}, {1, 1});
  CHECK(y.shape() == Shape{1, 5, 6});
  // interior positions see the full 3x3 window
  CHECK(y[1 * 6 + 1] == doctest::Approx(9 * c));
  CHECK(y[2 * 6 + 3] == doctest::Approx(9 * c));
  // corner sees only 2x2
  CHECK(y[0] == doctest::Approx(4 * c));
}

TEST_CASE("conv2d matches six-loop oracle") {
  Tensor x = random_tensor({2, 5, 6}, 21);
  Tensor w = random_tensor({3, 2, 3, 3}, 22);
  Tensor b = random_tensor({3}, 23);
  SUBCASE("stride 1 pad 1") {
    CHECK(oracles::max_abs_diff(conv2d(x, w, b, {1, 1}, {1, 1}),
                                oracles::naive_conv2d(x, w, b, 1, 1, 1, 1)) < 1e-10);
  }
  SUBCASE("stride 1 pad 0") {
    CHECK(oracles::max_abs_diff(conv2d(x, w, b, {1, 1}, {0, 0}),
                                oracles::naive_conv2d(x, w, b, 1, 1, 0, 0)) < 1e-10);
  }
  SUBCASE("asymmetric stride") {
    Tensor x2 = random_tensor({2, 7, 9}, 24);
    CHECK(oracles::max_abs_diff(conv2d(x2, w, b, {2, 3}, {1, 0}),
                                oracles::naive_conv2d(x2, w, b, 2, 3, 1, 0)) < 1e-10);
  }
}

TEST_CASE("conv2d rejects non-integral output extents") {
  Tensor x({1, 5, 5});
  Tensor w({1, 1, 2, 2});
  Tensor b({1});
  CHECK_THROWS_AS(conv2d(x, w, b, {2, 2}, {0, 0}), ConfigError);
}

TEST_CASE("max_pool2d basics") {
  Tensor x({1, 2, 2}, {1, 2, 3, 4});
  Tensor y = max_pool2d(x, {2, 2}, {2, 2});
  CHECK(y.shape() == Shape{1, 1, 1});
  CHECK(y[0] == 4.0);
}

TEST_CASE("max_pool2d 2x1 halves height of a 12x40 map") {
  Tensor x = random_tensor({3, 12, 40}, 31);
  Tensor y = max_pool2d(x, {2, 1}, {2, 1});
  CHECK(y.shape() == Shape{3, 6, 40});
  CHECK(oracles::max_abs_diff(y, oracles::naive_max_pool2d(x, 2, 1, 2, 1)) == 0.0);
}

TEST_CASE("max_pool2d matches windowed-max oracle exactly") {
  Tensor x = random_tensor({2, 6, 8}, 32);
  CHECK(oracles::max_abs_diff(max_pool2d(x, {2, 2}, {2, 2}),
                              oracles::naive_max_pool2d(x, 2, 2, 2, 2)) == 0.0);
  CHECK_THROWS_AS(max_pool2d(x, {4, 4}, {3, 3}), ConfigError);
}

TEST_CASE("max_pool2d tie routes gradient to first occurrence") {
  Tensor x({1, 1, 2}, {3.0, 3.0});
  x.set_requires_grad(true);
  GradTape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum(max_pool2d(x, {1, 2}, {1, 2})));
  }
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == 0.0);
}

TEST_CASE("grad_check quadratic exactness") {
  Tensor x({2}, {1, 2});
  const double err = grad_check([](const Tensor& t) { return sum(mul(t, t)); }, x);
  CHECK(err < 1e-7);
  // analytic gradient is [2, 4]
  x.set_requires_grad(true);
  GradTape tape;
  {
    TapeScope scope(tape);
    x.zero_grad();
    tape.backward(sum(mul(x, x)));
  }
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("grad_check rejects non-scalar objectives") {
  Tensor x({2}, {1, 2});
  CHECK_THROWS_AS(grad_check([](const Tensor& t) { return add(t, t); }, x), ContractError);
}

TEST_CASE("gradcheck every primitive op") {
  std::mt19937_64 rng(55);
  auto x34 = rand_normal({3, 4}, 1.0, rng);
  auto y34 = rand_normal({3, 4}, 1.0, rng);

  CHECK(grad_check([&](const Tensor& t) { return sum(add(t, y34)); }, x34) < 1e-4);
  CHECK(grad_check([&](const Tensor& t) { return sum(sub(y34, t)); }, x34) < 1e-4);
  CHECK(grad_check([&](const Tensor& t) { return sum(mul(t, y34)); }, x34) < 1e-4);
  CHECK(grad_check([&](const Tensor& t) { return sum(scale(t, -2.5)); }, x34) < 1e-4);
  CHECK(grad_check([&](const Tensor& t) { return sum(relu(t)); },
                   rand_normal({4, 4}, 1.0, rng)) < 1e-4);
  CHECK(grad_check([&](const Tensor& t) { return sum(transpose(t)); }, x34) < 1e-4);
  CHECK(grad_check([&](const Tensor& t) { return sum(reshape(t, {4, 3})); }, x34) < 1e-4);
  CHECK(grad_check([&](const Tensor& t) { return sum(narrow(t, 1, 1, 2)); }, x34) < 1e-4);
  CHECK(grad_check([&](const Tensor& t) { return sum(concat({t, y34}, 0)); }, x34) < 1e-4);
  CHECK(grad_check([&](const Tensor& t) { return sum(softmax(t, 1)); }, x34) < 1e-4);
  CHECK(grad_check([&](const Tensor& t) { return sum(mul(softmax(t, 1), y34)); }, x34) < 1e-4);

  auto a57 = rand_normal({5, 7}, 1.0, rng);
  auto b73 = rand_normal({7, 3}, 1.0, rng);
  CHECK(grad_check([&](const Tensor& t) { return sum(matmul(t, b73)); }, a57) < 1e-4);
  CHECK(grad_check([&](const Tensor& t) { return sum(matmul(a57, t)); }, b73) < 1e-4);

  auto gamma = rand_normal({4}, 1.0, rng);
  auto beta = rand_normal({4}, 1.0, rng);
  CHECK(grad_check([&](const Tensor& t) { return sum(layer_norm(t, gamma, beta, 1)); }, x34) <
        1e-4);
  CHECK(grad_check([&](const Tensor& t) { return sum(layer_norm(x34, t, beta, 1)); }, gamma) <
        1e-4);
  CHECK(grad_check([&](const Tensor& t) { return sum(layer_norm(x34, gamma, t, 1)); }, beta) <
        1e-4);

  auto vec = rand_normal({4}, 1.0, rng);
  CHECK(grad_check([&](const Tensor& t) { return sum(broadcast_add(t, vec, 1)); }, x34) < 1e-4);
  CHECK(grad_check([&](const Tensor& t) { return sum(broadcast_add(x34, t, 1)); }, vec) < 1e-4);

  auto map = rand_normal({3, 4, 5}, 1.0, rng);
  auto sg = rand_normal({3}, 1.0, rng);
  auto sb = rand_normal({3}, 1.0, rng);
  CHECK(grad_check([&](const Tensor& t) { return sum(mul(spatial_norm(t, sg, sb), t)); }, map) <
        1e-4);
  CHECK(grad_check([&](const Tensor& t) { return sum(spatial_norm(map, t, sb)); }, sg) < 1e-4);
  CHECK(grad_check([&](const Tensor& t) { return sum(spatial_norm(map, sg, t)); }, sb) < 1e-4);

  auto img = rand_normal({2, 5, 6}, 1.0, rng);
  auto kern = rand_normal({3, 2, 3, 3}, 0.5, rng);
  auto bias = rand_normal({3}, 0.5, rng);
  CHECK(grad_check([&](const Tensor& t) { return sum(conv2d(t, kern, bias, {1, 1}, {1, 1})); },
                   img) < 1e-4);
  CHECK(grad_check([&](const Tensor& t) { return sum(conv2d(img, t, bias, {1, 1}, {1, 1})); },
                   kern) < 1e-4);
  CHECK(grad_check([&](const Tensor& t) { return sum(conv2d(img, kern, t, {1, 1}, {1, 1})); },
                   bias) < 1e-4);
  CHECK(grad_check([&](const Tensor& t) { return sum(max_pool2d(t, {2, 2}, {1, 1})); },
                   rand_normal({2, 5, 5}, 1.0, rng)) < 1e-4);

  auto table = rand_normal({6, 3}, 1.0, rng);
  const std::vector<int> ids{1, 4, 1, 5};
  CHECK(grad_check([&](const Tensor& t) { return sum(embed(t, ids)); }, table) < 1e-4);
}

TEST_CASE("tape replays rules in reverse order exactly once") {
  GradTape tape;
  std::vector<int> order;
  tape.record([&order] { order.push_back(1); });
  tape.record([&order] { order.push_back(2); });
  tape.record([&order] { order.push_back(3); });
  tape.backward(Tensor::scalar(0.0));
  CHECK(order == std::vector<int>{3, 2, 1});
}

TEST_CASE("no recording without an active tape") {
  Tensor x({2}, {1, 2});
  x.set_requires_grad(true);
  GradTape tape;
  {
    TapeScope scope(tape);
    NoGradScope no_grad;
    Tensor y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(tape.size() == 0);
}

TEST_CASE("gradient accumulates across uses") {
  Tensor x({1}, {3.0});
  x.set_requires_grad(true);
  GradTape tape;
  {
    TapeScope scope(tape);
    Tensor y = add(mul(x, x), x);  // d/dx = 2x + 1 = 7
    tape.backward(y);
  }
  CHECK(x.grad()[0] == doctest::Approx(7.0));
}

TEST_CASE("dropout identity at rate zero and mask consistency") {
  std::mt19937_64 rng(3);
  Tensor x = rand_normal({10, 10}, 1.0, rng);
  Tensor y = dropout(x, 0.0, rng);
  CHECK(oracles::max_abs_diff(x, y) == 0.0);

  Tensor z = dropout(x, 0.5, rng);
  int zeros = 0;
  for (std::int64_t i = 0; i < z.size(); ++i) {
    if (z[i] == 0.0) {
      ++zeros;
    } else {
      CHECK(z[i] == doctest::Approx(2.0 * x[i]));
    }
  }
  CHECK(zeros > 20);
  CHECK(zeros < 80);
  CHECK_THROWS_AS(dropout(x, 1.0, rng), ConfigError);
}
