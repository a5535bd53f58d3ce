// SPDX-License-Identifier: Apache-2.0
//
// Softmax, attention, Fourier encoding, layer norm and the finite-difference
// oracle, with every backward pass checked against central differences.

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "clickseg/numerics.hpp"
#include "test_util.hpp"

using namespace clickseg;
using clickseg::testing::naive_matmul;
using clickseg::testing::numeric_grad;
using clickseg::testing::random_tensor;
using clickseg::testing::rel_error;
using clickseg::testing::transpose;
using clickseg::testing::weighted_sum;

namespace {

Tensor<double> uniform_tensor(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor<double> t(r, c);
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

// Hand-composed reference: exp / row sum / matmul without the library kernels.
Tensor<double> reference_attention(const Tensor<double>& q, const Tensor<double>& k,
                                   const Tensor<double>& v) {
  Tensor<double> s = naive_matmul(q, transpose(k));
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  for (std::size_t i = 0; i < s.rows(); ++i) {
    double mx = -1e300;
    for (std::size_t j = 0; j < s.cols(); ++j) mx = std::max(mx, s(i, j) * inv);
    double z = 0;
    for (std::size_t j = 0; j < s.cols(); ++j) z += std::exp(s(i, j) * inv - mx);
    for (std::size_t j = 0; j < s.cols(); ++j) s(i, j) = std::exp(s(i, j) * inv - mx) / z;
  }
  return naive_matmul(s, v);
}

}  // namespace

TEST(Softmax, SymmetricRow) {
  Tensor<double> x(1, 2);
  const auto y = softmax_rows(x);
  EXPECT_DOUBLE_EQ(y(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(y(0, 1), 0.5);
}

TEST(Softmax, LargeGapDoesNotOverflow) {
  for (double x : {-5.0, 0.0, 700.0, 1e6}) {
    Tensor<double> t(1, 2);
    t(0, 0) = x;
    t(0, 1) = x + 1000;
    const auto y = softmax_rows(t);
    EXPECT_TRUE(std::isfinite(y(0, 0)) && std::isfinite(y(0, 1)));
    EXPECT_NEAR(y(0, 0), 0.0, 1e-300);
    EXPECT_DOUBLE_EQ(y(0, 1), 1.0);
  }
}

TEST(Softmax, RowsSumToOne) {
  const auto y = softmax_rows(random_tensor<double>(8, 8, 3, 4.0));
  for (std::size_t i = 0; i < 8; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 8; ++j) {
      EXPECT_GT(y(i, j), 0.0);
      s += y(i, j);
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Softmax, BackwardMatchesFiniteDifferences) {
  auto x = uniform_tensor(4, 6, 1);
  const auto w = uniform_tensor(4, 6, 2);
  const auto y = softmax_rows(x);
  const auto analytic = softmax_rows_backward(y, w);
  const auto numeric = numeric_grad(x, [&] { return weighted_sum(softmax_rows(x), w); }, 1e-5);
  EXPECT_LE(rel_error(analytic, numeric), 1e-4);
}

TEST(Attention, SingleKeyCopiesValue) {
  const auto q = uniform_tensor(5, 4, 1);
  const auto k = uniform_tensor(1, 4, 2);
  const auto v = uniform_tensor(1, 3, 3);
  const auto out = attention(q, k, v);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(out(i, j), v(0, j), 1e-15);
}

TEST(Attention, IdenticalKeysAverageValues) {
  const auto q = uniform_tensor(3, 4, 1);
  Tensor<double> k(6, 4);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 4; ++j) k(i, j) = 0.25 * static_cast<double>(j);
  const auto v = uniform_tensor(6, 2, 3);
  const auto out = attention(q, k, v);
  for (std::size_t j = 0; j < 2; ++j) {
    double mean = 0;
    for (std::size_t i = 0; i < 6; ++i) mean += v(i, j) / 6.0;
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(out(i, j), mean, 1e-14);
  }
}

TEST(Attention, MatchesComposedReference) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto q = uniform_tensor(2, 4, seed * 3 + 1);
    const auto k = uniform_tensor(3, 4, seed * 3 + 2);
    const auto v = uniform_tensor(3, 4, seed * 3 + 3);
    Tensor<double> weights;
    const auto out = attention(q, k, v, &weights);
    EXPECT_LE(clickseg::testing::max_abs_diff(out, reference_attention(q, k, v)), 1e-13);
    ASSERT_EQ(weights.rows(), 2u);
    ASSERT_EQ(weights.cols(), 3u);
    for (std::size_t i = 0; i < 2; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 3; ++j) s += weights(i, j);
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Attention, PermutationEquivariance) {
  const auto q = uniform_tensor(4, 8, 1);
  const auto k = uniform_tensor(7, 8, 2);
  const auto v = uniform_tensor(7, 5, 3);
  const auto out = attention(q, k, v);
  const std::vector<std::size_t> perm_kv{3, 0, 6, 1, 5, 2, 4};
  const std::vector<std::size_t> perm_q{2, 0, 3, 1};
  Tensor<double> kp(7, 8), vp(7, 5), qp(4, 8);
  for (std::size_t i = 0; i < 7; ++i) {
    for (std::size_t j = 0; j < 8; ++j) kp(i, j) = k(perm_kv[i], j);
    for (std::size_t j = 0; j < 5; ++j) vp(i, j) = v(perm_kv[i], j);
  }
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 8; ++j) qp(i, j) = q(perm_q[i], j);
  const auto out_kv = attention(q, kp, vp);
  EXPECT_LE(clickseg::testing::max_abs_diff(out, out_kv), 1e-14);
  const auto out_q = attention(qp, k, v);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(out_q(i, j), out(perm_q[i], j), 1e-14);
}

TEST(Attention, BackwardMatchesFiniteDifferences) {
  auto q = uniform_tensor(3, 4, 11);
  auto k = uniform_tensor(5, 4, 12);
  auto v = uniform_tensor(5, 6, 13);
  const auto w = uniform_tensor(3, 6, 14);
  Tensor<double> weights;
  attention(q, k, v, &weights);
  const auto g = attention_backward(q, k, v, weights, w);
  auto f = [&] { return weighted_sum(attention(q, k, v), w); };
  EXPECT_LE(rel_error(g.queries, numeric_grad(q, f, 1e-5)), 1e-4);
  EXPECT_LE(rel_error(g.keys, numeric_grad(k, f, 1e-5)), 1e-4);
  EXPECT_LE(rel_error(g.values, numeric_grad(v, f, 1e-5)), 1e-4);
}

TEST(Attention, ShapeErrors) {
  EXPECT_THROW(attention(Tensor<double>(2, 3), Tensor<double>(2, 4), Tensor<double>(2, 4)), Error);
  EXPECT_THROW(attention(Tensor<double>(2, 4), Tensor<double>(2, 4), Tensor<double>(3, 4)), Error);
  EXPECT_THROW(attention(Tensor<double>(2, 4), Tensor<double>(0, 4), Tensor<double>(0, 4)), Error);
}

TEST(FourierPe, OriginGivesZeroSinesAndUnitCosines) {
  const std::vector<Vec3> p{{0, 0, 0}};
  const auto pe = fourier_pe<double>(p, 4, 30);
  for (std::size_t c = 0; c < 24; ++c) EXPECT_DOUBLE_EQ(pe(0, c), c % 2 == 0 ? 0.0 : 1.0);
  for (std::size_t c = 24; c < 30; ++c) EXPECT_DOUBLE_EQ(pe(0, c), 0.0);  // padding
}

TEST(FourierPe, BandZeroHasPeriodTwo) {
  const std::vector<Vec3> p{{0.3, -0.7, 0.11}, {2.3, 1.3, 2.11}};
  const auto pe = fourier_pe<double>(p, 3, 18);
  for (int a = 0; a < 3; ++a)
    for (int s = 0; s < 2; ++s) {
      const std::size_t c = static_cast<std::size_t>(a * 6 + s);
      EXPECT_NEAR(pe(0, c), pe(1, c), 1e-12);
    }
}

TEST(FourierPe, MatchesDirectFormula) {
  const auto pts = clickseg::testing::random_points(20, 9, -0.5, 0.5);
  const auto pe = fourier_pe<double>(pts, 4, 24);
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (int a = 0; a < 3; ++a)
      for (int j = 0; j < 4; ++j) {
        const double arg = std::pow(2.0, j) * std::numbers::pi * pts[i][a];
        EXPECT_NEAR(pe(i, static_cast<std::size_t>(a * 8 + 2 * j)), std::sin(arg), 1e-14);
        EXPECT_NEAR(pe(i, static_cast<std::size_t>(a * 8 + 2 * j + 1)), std::cos(arg), 1e-14);
      }
  EXPECT_THROW(fourier_pe<double>(pts, 4, 23), Error);
  EXPECT_THROW(fourier_pe<double>(pts, -1, 0), Error);
}

TEST(LayerNorm, NormalizesRows) {
  const auto x = random_tensor<double>(5, 16, 4, 3.0);
  Tensor<double> gamma(1, 16), beta(1, 16);
  gamma.fill(1.0);
  const auto y = layer_norm(x, gamma, beta, static_cast<LayerNormCache<double>*>(nullptr));
  for (std::size_t i = 0; i < 5; ++i) {
    double m = 0, v = 0;
    for (std::size_t j = 0; j < 16; ++j) m += y(i, j) / 16;
    for (std::size_t j = 0; j < 16; ++j) v += (y(i, j) - m) * (y(i, j) - m) / 16;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-5);
  }
}

TEST(LayerNorm, BackwardMatchesFiniteDifferences) {
  auto x = uniform_tensor(4, 7, 21);
  auto gamma = uniform_tensor(1, 7, 22);
  auto beta = uniform_tensor(1, 7, 23);
  const auto w = uniform_tensor(4, 7, 24);
  LayerNormCache<double> cache;
  layer_norm(x, gamma, beta, &cache);
  Tensor<double> dg(1, 7), db(1, 7);
  const auto dx = layer_norm_backward(cache, gamma, w, dg, db);
  auto f = [&] {
    return weighted_sum(layer_norm(x, gamma, beta, static_cast<LayerNormCache<double>*>(nullptr)), w);
  };
  EXPECT_LE(rel_error(dx, numeric_grad(x, f, 1e-5)), 1e-4);
  EXPECT_LE(rel_error(dg, numeric_grad(gamma, f, 1e-5)), 1e-4);
  EXPECT_LE(rel_error(db, numeric_grad(beta, f, 1e-5)), 1e-4);
}

TEST(Activation, GradientsMatchFiniteDifferences) {
  for (auto act : {Activation::gelu, Activation::relu})
    for (double x = -3.05; x < 3.0; x += 0.1) {
      const double h = 1e-6;
      const double fd = (activate(act, x + h) - activate(act, x - h)) / (2 * h);
      EXPECT_NEAR(activate_grad(act, x), fd, 1e-7) << x;
    }
  EXPECT_DOUBLE_EQ(activate(Activation::relu, -2.0), 0.0);
  EXPECT_NEAR(activate(Activation::gelu, 0.0), 0.0, 1e-300);
}

TEST(FiniteDiff, QuadraticIsExact) {
  auto f = [](std::span<const double> t) { return t[0] * t[0] + t[1] * t[1]; };
  const std::vector<double> theta{1.0, 2.0};
  const auto g = finite_diff_grad(f, theta);
  EXPECT_NEAR(g[0], 2.0, 1e-8);
  EXPECT_NEAR(g[1], 4.0, 1e-8);
  EXPECT_NEAR(finite_diff_coord(f, theta, 1), 4.0, 1e-8);
}

TEST(FiniteDiff, ConstantHasZeroGradient) {
  auto f = [](std::span<const double>) { return 3.5; };
  const std::vector<double> theta{0.1, -4.0, 9.0};
  for (double g : finite_diff_grad(f, theta)) EXPECT_EQ(g, 0.0);
}

TEST(FiniteDiff, Errors) {
  auto nan = [](std::span<const double>) { return std::nan(""); };
  const std::vector<double> theta{1.0};
  EXPECT_THROW(finite_diff_grad(nan, theta), Error);
  EXPECT_THROW(finite_diff_grad([](std::span<const double>) { return 0.0; }, theta, 0.0), Error);
}

TEST(Matmul, FloatMatchesOracle) {
  const auto a = random_tensor<float>(13, 9, 1);
  const auto b = random_tensor<float>(9, 11, 2);
  EXPECT_LE(clickseg::testing::max_abs_diff(matmul(a, b), naive_matmul(a, b)), 1e-5);
  EXPECT_LE(clickseg::testing::max_abs_diff(matmul(transpose(a), b, true, false), naive_matmul(a, b)),
            1e-5);
}
