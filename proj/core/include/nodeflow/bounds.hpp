#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nodeflow/flow.hpp"
#include "nodeflow/linalg.hpp"
#include "nodeflow/nets.hpp"
#include "nodeflow/spectral.hpp"

namespace nodeflow {

using VectorFunction = std::function<Vector(std::span<const double>)>;

// Finite point set standing in for the compact domain K.
struct CompactGrid {
  Vector lower;  // empty for explicit point sets
  Vector upper;
  double h = 0.0;
  std::vector<Vector> points;

  // Tensor grid lower_i, lower_i + h, ..., upper_i (both ends included).
  static CompactGrid box(Vector lower, Vector upper, double h);
  static CompactGrid from_points(std::vector<Vector> points);

  std::size_t size() const noexcept { return points.size(); }
  std::size_t dim() const noexcept { return points.empty() ? 0 : points.front().size(); }
};

// "box=lo1,hi1,lo2,hi2,...;h=0.05"
CompactGrid parse_grid(const std::string& spec);

// tbar, tbar + k, ..., 1
std::vector<double> time_grid(double tbar, double tstep);

// max over the grid of ||f(x) - net(x)||_2; a grid under-estimate of the sup over K.
double estimate_epsilon(const VectorFunction& f, const VectorFunction& net, const CompactGrid& grid);
double estimate_epsilon(const VectorFunction& f, const Model& net, const CompactGrid& grid);

// How the hidden trajectories z(t) are integrated. steps = 0 uses the net's Euler steps.
struct TrajectoryOptions {
  Integrator method = Integrator::euler;
  int steps = 0;
};
inline TrajectoryOptions tight_trajectories() { return {Integrator::rk4, kReferenceSteps}; }

// z(t) = phi_t(A1 x + b1)
FlowTrajectory hidden_trajectory(const ShallowFlowNet& net, std::span<const double> x,
                                 const TrajectoryOptions& opts = {});

// Trajectory node indices for the requested times (nearest node).
std::vector<std::size_t> time_nodes(std::span<const double> times, int steps);

// C = max over grid and tgrid of ||z(t)||_2.
double constant_C(const ShallowFlowNet& net, const CompactGrid& grid, std::span<const double> tgrid,
                  const TrajectoryOptions& opts = {});
// min over grid of m(x) = min over tgrid (all >= tbar) of ||z(t)||_2.
double constant_m(const ShallowFlowNet& net, const CompactGrid& grid, std::span<const double> tgrid, double tbar,
                  const TrajectoryOptions& opts = {});

// (e^d - 1)/d with value 1 at d = 0.
double growth_factor(double d);
// (e^{d (1 - tbar)} - 1)/d with value 1 - tbar at d = 0.
double lower_growth_factor(double d, double tbar);

// C sigma_max(Delta) g(delta) + epsilon
double upper_bound(double epsilon, double C, double sigma_max_delta, double delta);

// c1 e^{delta'(1 - tbar)} + c2 sigma_min(Delta) G(delta') - epsilon
double lower_bound(double c1, double c2, double sigma_min_delta, double delta_prime, double tbar, double epsilon);

struct NegativeEtaBound {
  double value = 0.0;
  bool vacuous = false;  // value < 0
};
// Variant for min eta <= 0: c2 built from max M and min eta, paired with sigma_max(Delta).
NegativeEtaBound lower_bound_negative_eta(double c1, double c2, double sigma_max_delta, double delta_prime,
                                          double tbar, double epsilon);

// Cosine of the angle between u and v; nullopt when either norm is below 1e-12.
std::optional<double> cosine(std::span<const double> u, std::span<const double> v);
inline constexpr double kCosineNormFloor = 1e-12;

// min over the vertices D of the box and over the given trajectory nodes of
// cos(z - zbar, -D Delta z). nullopt when undefined at any required (D, t).
std::optional<double> eta_from_trajectories(const FlowTrajectory& z, const FlowTrajectory& zbar, const Matrix& Delta,
                                            const OmegaBox& box, std::span<const std::size_t> nodes);

std::optional<double> eta(const ShallowFlowNet& net, const ShallowFlowNet& netbar, const Matrix& Delta,
                          std::span<const double> x, const OmegaBox& box, double tbar,
                          std::span<const double> tgrid, const TrajectoryOptions& opts = {});

struct RegionPoint {
  Vector x;
  double eta = 0.0;  // NaN when undefined
  bool holds = false;
  bool undefined = false;
};

struct RegionMap {
  std::vector<RegionPoint> points;
  double fraction_green() const;
};

struct RegionOptions {
  double tbar = 0.3;
  double tstep = 0.05;
  TrajectoryOptions trajectories;
};

RegionMap region_map(const ShallowFlowNet& net, const ShallowFlowNet& netbar, const Matrix& Delta,
                     const CompactGrid& grid, const OmegaBox& box, const RegionOptions& opts = {});

struct BoundOptions {
  double tbar = 0.3;
  TrajectoryOptions trajectories = tight_trajectories();
  // Second integration used to bound the integrator error; 0 disables it.
  int crosscheck_steps = kReferenceSteps / 2;
  double crosscheck_tol = 1e-6;
  double tolerance = 1e-8;
  bool throw_on_violation = true;
};

// Per-point quantities from the tight trajectories.
struct PointBound {
  Vector x;
  double gap = 0.0;       // ||z(1) - zbar(1)||_2
  double output_gap = 0.0;  // ||phi(x) - phibar(x)||_2
  double c1 = 0.0;        // ||z(tbar) - zbar(tbar)||_2
  double m = 0.0;         // min over [tbar, 1] of ||z(t)||_2
  double M = 0.0;         // max over [tbar, 1] of ||z(t)||_2
  double eta = 0.0;       // NaN when undefined
  bool eta_positive = false;
  double lower = 0.0;     // per-point lower bound on gap (meaningful when eta_positive)
};

struct BoundReport {
  double epsilon = 0.0;
  double delta = 0.0;
  double delta_prime = 0.0;
  double sigma_max_Delta = 0.0;
  double sigma_min_Delta = 0.0;
  double sigma_max_A2 = 0.0;
  double sigma_min_A2 = 0.0;
  double C = 0.0;
  double c1 = 0.0;
  double c2 = 0.0;
  double tbar = 0.0;
  double eta_min = 0.0;  // NaN when undefined somewhere
  double upper_value = 0.0;
  double lower_value = 0.0;
  bool lower_from_negative_eta = false;
  bool lower_vacuous = false;
  double empirical_sup = 0.0;
  double fraction_green = 0.0;
  double integrator_disagreement = 0.0;
  std::size_t points = 0;
  std::size_t lower_checked = 0;
  std::size_t lower_violations = 0;
  bool upper_violated = false;
  std::vector<PointBound> per_point;

  std::string to_json() const;
};

// Evaluates both bounds for netbar (a stabilized copy of net) against the
// target f; an empty f means f = net, so epsilon = 0. Flows use the tight
// integrator. Violations raise BoundViolation naming a witness point unless
// opts.throw_on_violation is false.
BoundReport verify_bounds(const VectorFunction& f, const ShallowFlowNet& net, const ShallowFlowNet& netbar,
                          const CompactGrid& grid, const OmegaBox& box, const BoundOptions& opts = {});

}  // namespace nodeflow
