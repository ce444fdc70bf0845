#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "helpers.hpp"
#include "nodeflow/errors.hpp"
#include "nodeflow/linalg.hpp"

using namespace nodeflow;
using testing_helpers::random_matrix;
using testing_helpers::random_vector;

TEST(Sym, Examples) {
  EXPECT_EQ(sym(Matrix::identity(3)), Matrix::identity(3));
  EXPECT_EQ(sym(Matrix{{0, 1}, {-1, 0}}), (Matrix{{0, 0}, {0, 0}}));
  EXPECT_EQ(sym(Matrix{{1, 2}, {0, 1}}), (Matrix{{1, 1}, {1, 1}}));
  EXPECT_THROW(sym(Matrix(2, 3)), DimensionError);
}

TEST(EigSym, Examples) {
  auto r = eig_sym(Matrix{{3, 0}, {0, 1}});
  EXPECT_DOUBLE_EQ(r.values[0], 1.0);
  EXPECT_DOUBLE_EQ(r.values[1], 3.0);

  r = eig_sym(Matrix{{1, 1}, {1, 1}});
  EXPECT_NEAR(r.values[0], 0.0, 1e-15);
  EXPECT_NEAR(r.values[1], 2.0, 1e-15);

  r = eig_sym(Matrix(4, 4));
  for (double v : r.values) EXPECT_EQ(v, 0.0);

  EXPECT_THROW(eig_sym(Matrix{{1, 2}, {0, 1}}), ContractError);
  EXPECT_THROW(eig_sym(Matrix(2, 3)), DimensionError);
}

TEST(EigSym, Reconstruction) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + trial % 12;
    const Matrix s = sym(random_matrix(n, n, rng));
    const auto r = eig_sym(s);
    for (std::size_t i = 1; i < n; ++i) EXPECT_LE(r.values[i - 1], r.values[i]);
    Matrix lam(n, n);
    for (std::size_t i = 0; i < n; ++i) lam(i, i) = r.values[i];
    const Matrix back = r.vectors * lam * r.vectors.transposed();
    EXPECT_LE(frobenius_norm(s - back), 1e-9 * frobenius_norm(s));
    // orthonormal columns
    const Matrix vtv = r.vectors.transposed() * r.vectors;
    EXPECT_LE(frobenius_norm(vtv - Matrix::identity(n)), 1e-12);
  }
}

TEST(EigSym, MatchesEigen) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n = 2 + trial % 20;
    const Matrix s = sym(random_matrix(n, n, rng));
    const auto r = eig_sym(s);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(testing_helpers::to_eigen(s), Eigen::EigenvaluesOnly);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(r.values[i], es.eigenvalues()(i), 1e-11);
  }
}

TEST(Mu2, Examples) {
  EXPECT_DOUBLE_EQ(mu2(Matrix::identity(3)), 1.0);
  EXPECT_NEAR(mu2(Matrix{{0, 1}, {-1, 0}}), 0.0, 1e-15);
  EXPECT_NEAR(mu2(Matrix{{1, 2}, {0, 1}}), 2.0, 1e-15);
  EXPECT_THROW(mu2(Matrix(3, 2)), DimensionError);
}

TEST(Mu2, MatchesIndependentSolver) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix a = random_matrix(8, 8, rng);
    EXPECT_NEAR(mu2(a), testing_helpers::oracle_mu2(a), 1e-10);
  }
}

TEST(Mu2, LimitDefinition) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + trial % 5;
    const Matrix a = random_matrix(n, n, rng);
    const double mu = mu2(a);
    double prev_err = std::numeric_limits<double>::infinity();
    for (double h : {1e-5, 1e-6}) {
      const double q = (spectral_norm(Matrix::identity(n) + h * a) - 1.0) / h;
      const double err = std::abs(q - mu);
      EXPECT_LT(err, 1e-3) << "h=" << h;
      EXPECT_LE(err, prev_err + 1e-9);
      prev_err = err;
    }
  }
}

TEST(SigmaExtremes, Examples) {
  auto [lo, hi] = sigma_extremes(Matrix::identity(2));
  EXPECT_NEAR(lo, 1.0, 1e-15);
  EXPECT_NEAR(hi, 1.0, 1e-15);
  std::tie(lo, hi) = sigma_extremes(Matrix{{2, 0}, {0, 0.5}});
  EXPECT_NEAR(lo, 0.5, 1e-15);
  EXPECT_NEAR(hi, 2.0, 1e-15);
  std::tie(lo, hi) = sigma_extremes(Matrix{{0, 3}, {0, 0}});
  EXPECT_NEAR(lo, 0.0, 1e-15);
  EXPECT_NEAR(hi, 3.0, 1e-15);
  EXPECT_NEAR(spectral_norm(Matrix{{0, 3}, {0, 0}}), 3.0, 1e-15);
}

TEST(SigmaExtremes, MatchesEigenSvd) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t r = 1 + trial % 6, c = 1 + (trial / 6) % 6;
    const Matrix a = random_matrix(r, c, rng);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(testing_helpers::to_eigen(a));
    const auto sv = svd.singularValues();
    const auto [lo, hi] = sigma_extremes(a);
    EXPECT_NEAR(hi, sv(0), 1e-10);
    // min over all columns; a wide matrix has a zero singular direction
    const double lo_ref = c > r ? 0.0 : sv(sv.size() - 1);
    EXPECT_NEAR(lo, lo_ref, 1e-7);
  }
}

TEST(Inequalities, SingularValueSandwich) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + trial % 7;
    const Matrix a = random_matrix(n, n, rng);
    const Vector x = random_vector(n, rng);
    const auto [lo, hi] = sigma_extremes(a);
    const double ax = norm2(a * x), nx = norm2(x);
    EXPECT_LE(lo * nx, ax + 1e-10);
    EXPECT_LE(ax, hi * nx + 1e-10);
  }
}

TEST(Inequalities, LogNormQuadraticForm) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + trial % 7;
    const Matrix a = random_matrix(n, n, rng);
    const Vector x = random_vector(n, rng);
    const double q = dot(x, a * x), nx2 = dot(x, x);
    EXPECT_LE(-mu2(-1.0 * a) * nx2, q + 1e-10);
    EXPECT_LE(q, mu2(a) * nx2 + 1e-10);
  }
}

TEST(MatrixText, RoundTripBitwise) {
  std::mt19937_64 rng(8);
  const Matrix a = random_matrix(3, 5, rng, 1e3);
  std::stringstream ss;
  write_matrix(ss, a);
  EXPECT_EQ(read_matrix(ss), a);
}

TEST(MatrixText, ParseErrors) {
  std::istringstream bad_header("2 x\n");
  EXPECT_THROW(read_matrix(bad_header), ParseError);
  std::istringstream short_body("2 2\n1 2\n3\n");
  EXPECT_THROW(read_matrix(short_body), ParseError);
  std::istringstream bad_cell("1 2\n1 abc\n");
  EXPECT_THROW(read_matrix(bad_cell), ParseError);
}

TEST(Matrix, ProductShapes) {
  EXPECT_THROW(Matrix(2, 3) * Matrix(2, 3), DimensionError);
  const Matrix a{{1, 2}, {3, 4}};
  const Vector x{1, 1};
  EXPECT_EQ(a * x, (Vector{3, 7}));
  EXPECT_EQ(transpose_times(a, x), (Vector{4, 6}));
}
