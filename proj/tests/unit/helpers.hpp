#pragma once

#include <random>

#include <Eigen/Dense>

#include "nodeflow/linalg.hpp"

namespace testing_helpers {

inline nodeflow::Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  nodeflow::Matrix m(r, c);
  for (double& v : m.data()) v = g(rng);
  return m;
}

inline nodeflow::Vector random_vector(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  nodeflow::Vector v(n);
  for (double& x : v) x = g(rng);
  return v;
}

inline Eigen::MatrixXd to_eigen(const nodeflow::Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
  return e;
}

// lambda_max of (A + A^T)/2 from Eigen's dense symmetric solver.
inline double oracle_mu2(const nodeflow::Matrix& a) {
  const Eigen::MatrixXd e = to_eigen(a);
  const Eigen::MatrixXd s = 0.5 * (e + e.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

// Brute-force max over the vertices of Omega_alpha of mu2(D A), via Eigen.
inline double oracle_delta_star(const nodeflow::Matrix& a, double alpha, double sign = 1.0) {
  const std::size_t d = a.rows();
  double best = -1e300;
  for (std::size_t mask = 0; mask < (std::size_t{1} << d); ++mask) {
    nodeflow::Matrix da = a;
    for (std::size_t i = 0; i < d; ++i) {
      const double di = (mask >> i) & 1 ? 1.0 : alpha;
      for (std::size_t j = 0; j < d; ++j) da(i, j) *= sign * di;
    }
    best = std::max(best, oracle_mu2(da));
  }
  return best;
}

}  // namespace testing_helpers
