#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "oracles.hpp"
#include "voxcast/gradcheck.hpp"
#include "voxcast/ops.hpp"

using namespace voxcast;
using oracle::random_tensor;

TEST_CASE("conv3d all-ones kernel sums the 27-cell window") {
  Tensor<double> x({1, 1, 4, 5, 6}, 1.0), w({1, 1, 3, 3, 3}, 1.0), b({1});
  const auto y = ops::conv3d_forward(x, w, b, {3, 1, 0});
  CHECK(y.shape() == Shape{1, 1, 2, 3, 4});
  for (double v : y.data()) CHECK(v == 27.0);
}

TEST_CASE("conv3d centered delta kernel with padding 1 is the identity") {
  Rng rng(3);
  const auto x = random_tensor({2, 1, 5, 4, 6}, rng);
  Tensor<double> w({1, 1, 3, 3, 3}), b({1});
  w[w.offset({0, 0, 1, 1, 1})] = 1.0;
  const auto y = ops::conv3d_forward(x, w, b, {3, 1, 1});
  CHECK(y == x);
}

TEST_CASE("conv3d matches the six-loop oracle") {
  Rng rng(11);
  SUBCASE("single channel 5^3") {
    const auto x = random_tensor({1, 1, 5, 5, 5}, rng);
    const auto w = random_tensor({1, 1, 3, 3, 3}, rng);
    const auto b = random_tensor({1}, rng);
    const auto y = ops::conv3d_forward(x, w, b, {3, 1, 0});
    const auto ref = oracle::conv3d(x, w, b, 3, 1, 0);
    REQUIRE(y.shape() == ref.shape());
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] - ref[i]) <= 1e-12 * std::max(1.0, std::abs(ref[i])));
  }
  SUBCASE("random geometries") {
    for (int trial = 0; trial < 25; ++trial) {
      const std::size_t k = 1 + rng.below(4), s = 1 + rng.below(3), p = rng.below((k + 1) / 2);
      const std::size_t n = 1 + rng.below(2), c = 1 + rng.below(3), o = 1 + rng.below(3);
      const std::size_t X = k + rng.below(5), Y = k + rng.below(5), Z = k + rng.below(6);
      const auto x = random_tensor({n, c, X, Y, Z}, rng);
      const auto w = random_tensor({o, c, k, k, k}, rng);
      const auto b = random_tensor({o}, rng);
      const auto y = ops::conv3d_forward(x, w, b, {k, s, p});
      const auto ref = oracle::conv3d(x, w, b, k, s, p);
      REQUIRE(y.shape() == ref.shape());
      CHECK(oracle::max_abs_diff(y, ref) < 1e-12);
    }
  }
}

TEST_CASE("conv3d output extent and shape errors") {
  CHECK(ops::conv_out_dim(32, {3, 1, 0}) == 30);
  CHECK(ops::conv_out_dim(7, {3, 2, 1}) == 4);
  Tensor<double> x({1, 2, 4, 4, 4}), w({1, 3, 3, 3, 3}), b({1});
  CHECK_THROWS_AS(ops::conv3d_forward(x, w, b, {3, 1, 0}), Error);
}

TEST_CASE("tconv3d matches the scatter oracle and grows 6 to 10 with k=5") {
  CHECK(ops::tconv_out_dim(6, {5, 1, 0}) == 10);
  CHECK(ops::tconv_out_dim(11, {2, 2, 0}) == 22);
  Rng rng(5);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t k = 1 + rng.below(4), s = 1 + rng.below(3), p = rng.below((k + 1) / 2);
    const std::size_t n = 1 + rng.below(2), c = 1 + rng.below(3), o = 1 + rng.below(3);
    const std::size_t X = 1 + rng.below(4), Y = 1 + rng.below(4), Z = 1 + rng.below(4);
    if ((X - 1) * s + k <= 2 * p || (Y - 1) * s + k <= 2 * p || (Z - 1) * s + k <= 2 * p) continue;
    const auto x = random_tensor({n, c, X, Y, Z}, rng);
    const auto w = random_tensor({c, o, k, k, k}, rng);
    const auto b = random_tensor({o}, rng);
    const auto y = ops::tconv3d_forward(x, w, b, {k, s, p});
    const auto ref = oracle::tconv3d(x, w, b, k, s, p);
    REQUIRE(y.shape() == ref.shape());
    CHECK(oracle::max_abs_diff(y, ref) < 1e-12);
  }
}

TEST_CASE("tconv3d with k=1 unit weight is the identity") {
  Rng rng(9);
  const auto x = random_tensor({2, 1, 3, 4, 5}, rng);
  Tensor<double> w({1, 1, 1, 1, 1}, 1.0), b({1});
  CHECK(ops::tconv3d_forward(x, w, b, {1, 1, 0}) == x);
}

TEST_CASE("leaky relu values and slope") {
  Tensor<double> x({4}, std::span<const double>(std::array{2.0, -1.0, 0.5, -3.0}));
  const auto y = ops::leaky_relu_forward(x, 0.01);
  CHECK(y[0] == 2.0);
  CHECK(y[1] == doctest::Approx(-0.01));
  CHECK(y[2] == 0.5);
  const auto g = ops::leaky_relu_backward(y, Tensor<double>({4}, 1.0), 0.01);
  CHECK(g[0] == 1.0);
  CHECK(g[1] == doctest::Approx(0.01));
}

TEST_CASE("sigmoid midpoint, symmetry and open range") {
  Rng rng(2);
  auto x = random_tensor({200}, rng, -40, 40);
  x[0] = 0.0;
  Tensor<double> neg(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) neg[i] = -x[i];
  const auto s = ops::sigmoid_forward(x), sn = ops::sigmoid_forward(neg);
  CHECK(s[0] == 0.5);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(s[i] + sn[i] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s[i] > 0.0);
    CHECK(s[i] < 1.0);
  }
}

TEST_CASE("maxpool3d against a naive window scan") {
  Rng rng(4);
  const auto x = random_tensor({2, 3, 6, 4, 8}, rng);
  const auto r = ops::maxpool3d_forward(x, {2, 2});
  REQUIRE(r.out.shape() == Shape{2, 3, 3, 2, 4});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 2; ++j)
          for (std::size_t l = 0; l < 4; ++l) {
            double m = -std::numeric_limits<double>::infinity();
            for (std::size_t a = 0; a < 2; ++a)
              for (std::size_t b = 0; b < 2; ++b)
                for (std::size_t d = 0; d < 2; ++d) m = std::max(m, x[x.offset({n, c, 2 * i + a, 2 * j + b, 2 * l + d})]);
            CHECK(r.out[r.out.offset({n, c, i, j, l})] == m);
          }
}

TEST_CASE("maxpool3d constant input, 32^3 to 16^3, ties route to the first cell") {
  Tensor<double> x({1, 1, 32, 32, 32}, 0.25);
  const auto r = ops::maxpool3d_forward(x, {2, 2});
  CHECK(r.out.shape() == Shape{1, 1, 16, 16, 16});
  for (double v : r.out.data()) CHECK(v == 0.25);
  const auto g = ops::maxpool3d_backward(x.shape(), r.argmax, Tensor<double>(r.out.shape(), 1.0));
  CHECK(g[0] == 1.0);
  CHECK(g[1] == 0.0);
  CHECK(g[g.offset({0, 0, 1, 1, 1})] == 0.0);
}

TEST_CASE("dense identity and bias-only") {
  Rng rng(8);
  const auto x = random_tensor({3, 4}, rng);
  Tensor<double> eye({4, 4}), zero({4});
  for (std::size_t i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0;
  CHECK(ops::dense_forward(x, eye, zero) == x);
  const auto b = random_tensor({4}, rng);
  const auto y = ops::dense_forward(x, Tensor<double>({4, 4}), b);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t k = 0; k < 4; ++k) CHECK(y[n * 4 + k] == b[k]);
}

TEST_CASE("batchnorm training statistics") {
  Rng rng(6);
  const auto x = random_tensor({4, 3, 2, 3, 2}, rng, -2, 5);
  Tensor<double> gamma({3}, 1.0), beta({3}), rm({3}), rv({3}, 1.0);
  ops::BatchNormCache<double> cache;
  const auto y = ops::batchnorm_forward(x, gamma, beta, rm, rv, {}, true, &cache);
  const std::size_t per = 2 * 3 * 2;
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0, sq = 0, xm = 0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < per; ++i) {
        mean += y[(n * 3 + c) * per + i];
        xm += x[(n * 3 + c) * per + i];
      }
    mean /= 4 * per;
    xm /= 4 * per;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < per; ++i) sq += std::pow(y[(n * 3 + c) * per + i] - mean, 2);
    CHECK(std::abs(mean) < 1e-6);
    CHECK(sq / (4 * per) == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(rm[c] == doctest::Approx(0.1 * xm));
  }

  SUBCASE("degenerate batch") {
    const auto one = random_tensor({1, 3, 2, 2, 2}, rng);
    CHECK_THROWS_AS(ops::batchnorm_forward(one, gamma, beta, rm, rv, {}, true, &cache), Error);
  }
}

TEST_CASE("batchnorm leaves normalized input unchanged in inference mode") {
  Rng rng(7);
  const auto x = random_tensor({3, 2, 2, 2, 2}, rng);
  Tensor<double> gamma({2}, 1.0), beta({2}), rm({2}), rv({2}, 1.0 - 1e-5);
  ops::BatchNormCache<double> cache;
  const auto y = ops::batchnorm_forward(x, gamma, beta, rm, rv, {}, false, &cache);
  CHECK(oracle::max_abs_diff(x, y) < 1e-12);
}

TEST_CASE("cross entropy analytic cases") {
  Tensor<double> labels({1, 9});
  labels[4] = 1.0;
  Tensor<double> uniform({1, 9}, 1.0 / 9.0);
  for (bool normalize : {true, false}) {
    ops::CrossEntropyOptions o;
    o.normalize = normalize;
    CHECK(ops::cross_entropy(uniform, labels, o) == doctest::Approx(std::log(9.0)).epsilon(1e-12));
  }
  ops::CrossEntropyOptions verbatim;
  verbatim.normalize = false;
  Tensor<double> exact({1, 9}, 1e-9);
  exact[4] = 1.0 - 1e-12;
  CHECK(ops::cross_entropy(exact, labels, verbatim) == doctest::Approx(0.0).epsilon(1e-6));

  SUBCASE("batch of identical rows sums") {
    Rng rng(1);
    auto row = random_tensor({1, 9}, rng, 0.05, 0.95);
    Tensor<double> batch({5, 9}), lb({5, 9});
    for (std::size_t n = 0; n < 5; ++n)
      for (std::size_t j = 0; j < 9; ++j) {
        batch[n * 9 + j] = row[j];
        lb[n * 9 + j] = labels[j];
      }
    for (bool normalize : {true, false}) {
      ops::CrossEntropyOptions o;
      o.normalize = normalize;
      CHECK(ops::cross_entropy(batch, lb, o) == doctest::Approx(5.0 * ops::cross_entropy(row, labels, o)));
    }
  }
  SUBCASE("scores outside (0,1) are rejected") {
    Tensor<double> bad({1, 9}, 0.5);
    bad[2] = 1.0;
    CHECK_THROWS_AS(ops::cross_entropy(bad, labels), Error);
    bad[2] = 0.0;
    CHECK_THROWS_AS(ops::cross_entropy(bad, labels), Error);
  }
}

TEST_CASE("l2 loss is the per-sample euclidean norm summed over the batch") {
  Tensor<double> a({2, 1, 2, 2, 2}), b({2, 1, 2, 2, 2});
  CHECK(ops::l2_loss(a, b) == 0.0);
  a[3] = 1.0;
  CHECK(ops::l2_loss(a, b) == 1.0);
  Rng rng(12);
  const auto p = random_tensor({3, 1, 3, 3, 3}, rng), t = random_tensor({3, 1, 3, 3, 3}, rng);
  double want = 0;
  for (std::size_t n = 0; n < 3; ++n) {
    double sq = 0;
    for (std::size_t i = 0; i < 27; ++i) sq += std::pow(p[n * 27 + i] - t[n * 27 + i], 2);
    want += std::sqrt(sq);
  }
  CHECK(ops::l2_loss(p, t) == doctest::Approx(want).epsilon(1e-12));
  CHECK(ops::l2_loss(p, t, ops::Reduction::Mean) == doctest::Approx(want / 3).epsilon(1e-12));
  CHECK_THROWS_AS(ops::l2_loss(p, Tensor<double>({3, 1, 3, 3, 2})), Error);
}

TEST_CASE("finite difference harness on analytic functions") {
  Rng rng(21);
  const auto x0 = random_tensor({12}, rng);
  const ScalarFn linear = [](const Tensor<double>& x, Tensor<double>* g) {
    double s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      s += (i + 1.0) * x[i];
      if (g) (*g)[i] = i + 1.0;
    }
    return s;
  };
  CHECK(finite_diff_check(linear, x0, 1e-4) < 1e-9);
  const ScalarFn square = [](const Tensor<double>& x, Tensor<double>* g) {
    double s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      s += x[i] * x[i];
      if (g) (*g)[i] = 2 * x[i];
    }
    return s;
  };
  CHECK(finite_diff_check(square, x0, 1e-4) < 1e-7);
  const ScalarFn wrong = [&](const Tensor<double>& x, Tensor<double>* g) {
    const double v = square(x, g);
    if (g) (*g)[0] *= -1.0;
    return v;
  };
  CHECK(finite_diff_check(wrong, x0, 1e-4) > 0.5);
}

TEST_CASE("tensor debug dump round-trips") {
  Rng rng(14);
  const auto t = random_tensor({2, 3, 4}, rng);
  std::stringstream ss;
  write_tensor(ss, t);
  CHECK(ss.str().substr(0, 4) == "VFTN");
  CHECK(read_tensor(ss) == t);
}
