#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "nodeflow/linalg.hpp"

namespace nodeflow {

// Omega_alpha: diagonal matrices D with alpha <= D_ii <= 1.
struct OmegaBox {
  std::size_t dim = 0;
  double alpha = 0.1;

  OmegaBox() = default;
  OmegaBox(std::size_t d, double a);
};

// Vertex of Omega_alpha: bit i set means D_ii = 1, clear means D_ii = alpha.
struct VertexMask {
  std::vector<bool> bits;

  static VertexMask from_index(std::uint64_t index, std::size_t dim);
  std::uint64_t index() const;
  Vector diagonal(double alpha) const;
  std::string to_string() const;  // "1,0,..." with 1 meaning D_ii = 1

  friend bool operator==(const VertexMask&, const VertexMask&) = default;
};

// Enumerates every vertex of the box in increasing mask order.
std::vector<VertexMask> box_vertices(const OmegaBox& box);

enum class MaxMethod { exact_enumeration, heuristic };

const char* to_string(MaxMethod m);

struct LogNormMaxResult {
  double value = 0.0;
  VertexMask argmax;
  MaxMethod method = MaxMethod::exact_enumeration;
  Vector leading_vector;  // unit eigenvector of sym(D A) at the argmax
};

// Largest dimension handled by exhaustive vertex enumeration.
inline constexpr std::size_t kExactVertexDim = 16;

struct LogNormMaxOptions {
  std::size_t exact_dim = kExactVertexDim;
  int random_starts = 32;
  std::uint64_t seed = 0;
};

// max over D in Omega_alpha of mu2(D A). The maximum of this convex function
// of D is attained at a vertex. Ties resolve to the smallest mask index.
LogNormMaxResult delta_star(const Matrix& a, const OmegaBox& box, const LogNormMaxOptions& opts = {});

// -max over D in Omega_alpha of mu2(-D Abar).
double delta_prime(const Matrix& abar, const OmegaBox& box, const LogNormMaxOptions& opts = {});

struct StabilizationResult {
  double delta_target = 0.0;
  double delta_achieved = 0.0;
  Matrix Delta;
  double frob_norm = 0.0;
  int iterations = 0;
  double baseline_norm = std::numeric_limits<double>::infinity();
  double delta_star = 0.0;
  MaxMethod method = MaxMethod::exact_enumeration;
  // Which feasible candidate was returned: "projection", "scaling" or "shift".
  std::string source;
};

struct StabilizeOptions {
  int max_iterations = 10000;
  // Constraint accuracy required on delta_star(A + Delta).
  double constraint_tol = 1e-6;
  LogNormMaxOptions lognorm;
};

// Perturbation Delta of small Frobenius norm with
// max_{D in Omega_alpha} mu2(D (A + Delta)) = delta_target.
//
// The feasible set {M : mu2(D M) <= delta for every vertex D} is convex, so
// the minimal perturbation is the Frobenius projection of A onto it. The
// projection is computed by accelerated projected gradient on the dual
// (one PSD multiplier per active vertex, vertices added as they become
// violated), followed by a bisection along the resulting direction that puts
// delta_star exactly on target. The scaled matrix (delta/delta_star) A and a
// diagonal shift are kept as feasible fallbacks; the smallest feasible
// candidate wins.
StabilizationResult stabilize(const Matrix& a, const OmegaBox& box, double delta_target,
                              const StabilizeOptions& opts = {});

}  // namespace nodeflow
