#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "cvlm/numkit/instrument.hpp"
#include "cvlm/numkit/random.hpp"
#include "cvlm/numkit/tensor.hpp"

using namespace cvlm::num;

namespace {

Matrix triple_loop(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      out(i, j) = acc;
    }
  return out;
}

double row_sum(const Matrix& m, std::size_t r) {
  double s = 0;
  for (double v : m.row(r)) s += v;
  return s;
}

}  // namespace

TEST(Matmul, IdentityLeavesOperand) {
  Matrix i{{1, 0}, {0, 1}};
  Matrix b{{3, 4}, {5, 6}};
  EXPECT_EQ(matmul(i, b), b);
}

TEST(Matmul, RowTimesColumn) {
  Matrix a{{1, 2}};
  Matrix b{{3}, {4}};
  auto c = matmul(a, b);
  ASSERT_EQ(c.rows(), 1u);
  ASSERT_EQ(c.cols(), 1u);
  EXPECT_EQ(c(0, 0), 11.0);
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(7);
  Matrix a = rng.gaussian(3, 4, 1.0);
  Matrix b = rng.gaussian(4, 2, 1.0);
  EXPECT_LE(max_abs_diff(matmul(a, b), triple_loop(a, b)), 1e-12);
}

TEST(Matmul, TransposedVariantsMatch) {
  Rng rng(8);
  Matrix a = rng.gaussian(5, 3, 1.0);
  Matrix b = rng.gaussian(4, 3, 1.0);
  Matrix c = rng.gaussian(5, 6, 1.0);
  EXPECT_LE(max_abs_diff(matmul_nt(a, b), triple_loop(a, transpose(b))), 1e-12);
  EXPECT_LE(max_abs_diff(matmul_tn(a, c), triple_loop(transpose(a), c)), 1e-12);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Matrix a(2, 3), b(2, 3);
  try {
    matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("2x3 and 2x3"), std::string::npos);
  }
}

TEST(Matmul, MacCountIsClosedForm) {
  MacCounter macs;
  Instrumentation probe(&macs);
  {
    Region r("gemm");
    matmul(Matrix(3, 4), Matrix(4, 5));
    matmul_nt(Matrix(2, 7), Matrix(6, 7));
    matmul_tn(Matrix(9, 2), Matrix(9, 3));
  }
  EXPECT_EQ(macs.at("gemm"), 3u * 4 * 5 + 2u * 7 * 6 + 2u * 9 * 3);
}

TEST(Matmul, CounterDetachedOutsideScope) {
  MacCounter macs;
  { Instrumentation probe(&macs); }
  matmul(Matrix(3, 3), Matrix(3, 3));
  EXPECT_EQ(macs.total(), 0u);
}

TEST(Softmax, ZeroRowIsUniform) {
  auto y = softmax_rows(Matrix{{0, 0}});
  EXPECT_DOUBLE_EQ(y(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(y(0, 1), 0.5);
}

TEST(Softmax, ScalarRecomputation) {
  auto y = softmax_rows(Matrix{{1, -1}});
  const double e = std::exp(2.0);
  EXPECT_NEAR(y(0, 0), e / (1 + e), 1e-15);
  EXPECT_NEAR(y(0, 0), 0.88079708, 1e-8);
  EXPECT_NEAR(y(0, 1), 0.11920292, 1e-8);
}

TEST(Softmax, LargeIdenticalValuesStayUniform) {
  auto y = softmax_rows(Matrix{{1e6, 1e6, 1e6, 1e6}});
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Softmax, RowsSumToOneOnRandomInputs) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix x = rng.gaussian(1 + rng.index(6), 1 + rng.index(20), 1.0 + 20.0 * rng.uniform(0, 1));
    auto y = softmax_rows(x);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      EXPECT_NEAR(row_sum(y, r), 1.0, 1e-9);
      for (double v : y.row(r)) EXPECT_GE(v, 0.0);
    }
  }
}

TEST(Softmax, CausalMasksFuture) {
  Matrix x{{1, 2, 3}, {1, 2, 3}, {1, 2, 3}};
  auto y = causal_softmax_rows(x);
  EXPECT_DOUBLE_EQ(y(0, 0), 1.0);
  EXPECT_EQ(y(0, 1), 0.0);
  EXPECT_EQ(y(1, 2), 0.0);
  EXPECT_NEAR(row_sum(y, 2), 1.0, 1e-12);
}

TEST(Softmax, LogSoftmaxMatchesLogOfSoftmax) {
  Rng rng(12);
  Matrix x = rng.gaussian(4, 7, 3.0);
  auto a = log_softmax_rows(x);
  auto b = softmax_rows(x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(a.values()[i], std::log(b.values()[i]), 1e-12);
}

TEST(LayerNorm, TwoElementRowWithoutEps) {
  auto y = layernorm_rows(Matrix{{1, 0}}, 0.0);
  EXPECT_NEAR(y(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(y(0, 1), -1.0, 1e-12);
}

TEST(LayerNorm, ConstantRowMapsToZero) {
  auto y = layernorm_rows(Matrix{{2.5, 2.5, 2.5}});
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, NormalizedRowIsFixedPoint) {
  Matrix x{{1, -1, 1, -1}};
  EXPECT_LE(max_abs_diff(layernorm_rows(x), x), 1e-5);
  EXPECT_LE(max_abs_diff(layernorm_rows(x, 0.0), x), 1e-12);
}

// With eps inside the root the output variance is v / (v + eps) for input
// variance v, so the 1e-6 band needs rows with v ≳ 10.
TEST(LayerNorm, RowMomentsOnRandomInput) {
  Rng rng(13);
  Matrix x = rng.gaussian(6, 16, 10.0);
  auto y = layernorm_rows(x);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    double in_mean = row_sum(x, r) / 16, in_var = 0;
    for (double v : x.row(r)) in_var += (v - in_mean) * (v - in_mean);
    in_var /= 16;
    double mean = row_sum(y, r) / 16, var = 0;
    for (double v : y.row(r)) var += (v - mean) * (v - mean);
    EXPECT_NEAR(mean, 0.0, 1e-9);
    EXPECT_NEAR(var / 16, 1.0, 1e-6);
    EXPECT_NEAR(var / 16, in_var / (in_var + kLayerNormEps), 1e-12);
  }
}

TEST(LayerNorm, SingleColumnRejected) { EXPECT_THROW(layernorm_rows(Matrix(3, 1)), DimensionError); }

TEST(L2Norm, ThreeFourFive) {
  auto y = l2norm_rows(Matrix{{3, 4}});
  EXPECT_NEAR(y(0, 0), 0.6, 1e-15);
  EXPECT_NEAR(y(0, 1), 0.8, 1e-15);
}

TEST(L2Norm, ZeroRowUnchanged) { EXPECT_EQ(l2norm_rows(Matrix{{0, 0}}), (Matrix{{0, 0}})); }

TEST(L2Norm, RandomRowsHaveUnitNorm) {
  Rng rng(14);
  auto y = l2norm_rows(rng.gaussian(10, 9, 2.0));
  for (double n : row_norms(y)) EXPECT_NEAR(n, 1.0, 1e-9);
}

TEST(ColumnNormalize, EmptyColumnStaysZero) {
  Matrix r{{0.5, 0.0}, {0.25, 0.0}};
  auto y = column_normalize(r);
  EXPECT_NEAR(y(0, 0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(y(1, 0), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(y(0, 1), 0.0);
  EXPECT_EQ(y(1, 1), 0.0);
}

TEST(ShapeOps, ReshapeIsRowMajorConcat) {
  Matrix x{{1, 2}, {3, 4}, {5, 6}, {7, 8}};
  EXPECT_EQ(reshape(x, 2, 4), (Matrix{{1, 2, 3, 4}, {5, 6, 7, 8}}));
  EXPECT_THROW(reshape(x, 3, 3), DimensionError);
}

TEST(ShapeOps, GatherMatchesIndexSelect) {
  Matrix x{{1, 2}, {3, 4}, {5, 6}};
  const std::size_t idx[] = {2, 0, 2};
  EXPECT_EQ(gather_rows(x, idx), (Matrix{{5, 6}, {1, 2}, {5, 6}}));
  const std::size_t bad[] = {3};
  EXPECT_THROW(gather_rows(x, bad), DimensionError);
}

TEST(ShapeOps, SliceConcatRoundTrip) {
  Rng rng(15);
  Matrix x = rng.gaussian(5, 6, 1.0);
  EXPECT_EQ(concat_cols(std::vector<Matrix>{slice_cols(x, 0, 2), slice_cols(x, 2, 4)}), x);
  EXPECT_EQ(concat_rows(std::vector<Matrix>{slice_rows(x, 0, 3), slice_rows(x, 3, 2)}), x);
}

template <class T>
double exp_ulp_error(double lo, double hi, int n) {
  Rng rng(41);
  double worst = 0;
  for (int i = 0; i < n; ++i) {
    const T x = static_cast<T>(rng.uniform(lo, hi));
    const T want = std::exp(x);
    const T ulp = std::nextafter(want, std::numeric_limits<T>::infinity()) - want;
    worst = std::max(worst, std::abs(static_cast<double>(fast_exp(x)) - want) / ulp);
  }
  return worst;
}

TEST(FastExp, WithinOneUlpOfLibm) {
  EXPECT_LE(exp_ulp_error<double>(-700, 709, 200000), 1.0);
  EXPECT_LE(exp_ulp_error<double>(-1, 1, 200000), 1.0);
  EXPECT_LE(exp_ulp_error<float>(-87, 88, 200000), 1.0);
  EXPECT_LE(exp_ulp_error<float>(-1, 1, 200000), 1.0);
}

TEST(FastExp, EdgeValues) {
  const double inf = std::numeric_limits<double>::infinity();
  EXPECT_EQ(fast_exp(0.0), 1.0);
  EXPECT_EQ(fast_exp(-inf), 0.0);
  EXPECT_EQ(fast_exp(-800.0), 0.0);
  EXPECT_EQ(fast_exp(inf), inf);
  EXPECT_EQ(fast_exp(710.0), inf);
  EXPECT_TRUE(std::isnan(fast_exp(std::nan(""))));
  EXPECT_EQ(fast_exp(-745.0), std::exp(-745.0));  // smallest subnormal
  EXPECT_EQ(fast_exp(100.0f), std::numeric_limits<float>::infinity());
  EXPECT_EQ(fast_exp(-104.0f), 0.0f);
}

TEST(FastExp, LaneSumMatchesPairing) {
  std::vector<double> v(37);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0 / static_cast<double>(i + 1);
  double acc[16] = {};
  for (std::size_t i = 0; i < 32; ++i) acc[i % 16] += v[i];
  double want = 0;
  for (double a : acc) want += a;
  for (std::size_t i = 32; i < v.size(); ++i) want += v[i];
  EXPECT_EQ(lane_sum<double>(v), want);
}

TEST(Gelu, KnownValues) {
  auto y = gelu(Matrix{{0, 1, -1}});
  EXPECT_EQ(y(0, 0), 0.0);
  EXPECT_NEAR(y(0, 1), 0.8411919906082768, 1e-12);
  EXPECT_NEAR(y(0, 2), -0.15880800939172324, 1e-12);
}

TEST(Determinism, SameSeedSameBits) {
  Rng a(99), b(99);
  Matrix x = a.gaussian(8, 8, 1.0), y = b.gaussian(8, 8, 1.0);
  EXPECT_EQ(softmax_rows(matmul(x, x)), softmax_rows(matmul(y, y)));
}

TEST(Precision, SinglePrecisionKernelsAgreeWithDouble) {
  Rng rng(16);
  Matrix a = rng.gaussian(6, 5, 1.0), b = rng.gaussian(5, 4, 1.0);
  auto f = matmul(cast<float>(a), cast<float>(b));
  EXPECT_LE(max_abs_diff(cast<double>(f), matmul(a, b)), 1e-5);
}
