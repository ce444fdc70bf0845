#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nodeflow/linalg.hpp"

namespace nodeflow {

enum class ActivationKind { leaky_relu, smoothed_leaky_relu };

const char* to_string(ActivationKind k);
ActivationKind parse_activation_kind(const std::string& s);

// Scalar activation whose derivative lies in [alpha, 1] everywhere.
//
// leaky-relu:           max(z, alpha z)
// smoothed-leaky-relu:  z on [0, inf), tanh z on [-zbar, 0), alpha z + beta below,
//                       with sech^2(zbar) = alpha and beta matching tanh at -zbar.
class ActivationSpec {
 public:
  ActivationSpec() = default;
  static ActivationSpec leaky_relu(double alpha);
  static ActivationSpec smoothed(double alpha);

  ActivationKind kind() const noexcept { return kind_; }
  double alpha() const noexcept { return alpha_; }
  double zbar() const noexcept { return zbar_; }
  double beta() const noexcept { return beta_; }

  double operator()(double z) const noexcept {
    if (z >= 0.0) return z;
    if (kind_ == ActivationKind::leaky_relu) return alpha_ * z;
    if (z >= -zbar_) return std::tanh(z);
    return alpha_ * z + beta_;
  }

  // Right limit at the kinks (1 at z = 0).
  double derivative(double z) const noexcept {
    if (z >= 0.0) return 1.0;
    if (kind_ == ActivationKind::leaky_relu) return alpha_;
    if (z >= -zbar_) {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
    return alpha_;
  }

  friend bool operator==(const ActivationSpec&, const ActivationSpec&) = default;

 private:
  ActivationSpec(ActivationKind kind, double alpha);

  ActivationKind kind_ = ActivationKind::leaky_relu;
  double alpha_ = 0.1;
  double zbar_ = 0.0;
  double beta_ = 0.0;
};

double act(const ActivationSpec& spec, double z);
double act_deriv(const ActivationSpec& spec, double z);

inline constexpr int kDefaultEulerSteps = 20;
// Step count of the reference (verification) integrator.
inline constexpr int kReferenceSteps = 1000;

enum class Integrator { euler, rk4 };

// u' = sigma(A u + b) on [0, 1].
struct NeuralOde {
  Matrix A;
  Vector b;
  ActivationSpec activation;
  int euler_steps = kDefaultEulerSteps;

  NeuralOde() = default;
  NeuralOde(Matrix a, Vector bias, ActivationSpec act, int steps = kDefaultEulerSteps);

  std::size_t dim() const noexcept { return b.size(); }
  // sigma(A u + b)
  Vector field(std::span<const double> u) const;
  void field_into(std::span<const double> u, std::span<double> out) const;
};

struct FlowTrajectory {
  std::vector<double> times;   // N + 1 nodes, 0 ... 1
  std::vector<Vector> states;  // states[k] at times[k]
};

// Explicit Euler with the ode's own step count: u_{k+1} = u_k + sigma(A u_k + b) / N.
Vector flow(const NeuralOde& ode, std::span<const double> u0);
FlowTrajectory flow_trajectory(const NeuralOde& ode, std::span<const double> u0);

// Trajectory with an explicit integrator and step count.
FlowTrajectory integrate(const NeuralOde& ode, std::span<const double> u0, Integrator method, int steps);

// Reference flow: classical RK4 with kReferenceSteps steps.
Vector reference_flow(const NeuralOde& ode, std::span<const double> u0);

// States of the single Euler trajectory at the requested times, each snapped
// to the nearest multiple of 1/N.
std::vector<Vector> flow_at_times(const NeuralOde& ode, std::span<const double> u0, std::span<const double> times);

// Index of the grid node nearest to t on a grid with `steps` intervals.
std::size_t snap_to_grid(double t, int steps);

// Time-1 Euler flow of the scalar ODE u' = sigma(u + lambda), usable as a
// classical entrywise activation.
std::function<double(double)> scalar_flow_activation(double lambda, const ActivationSpec& spec, int steps);

// Flow at time T of the piecewise system u' = u on [t0, 0), u' = sigma(A u + b)
// on [0, 1), u' = u on [1, T]. The linear phases are applied as exact scalings:
// e^{T-1} * flow(ode, e^{-t0} u0). Requires t0 <= 0 and T >= 1.
Vector piecewise_flow(const NeuralOde& ode, double t0, double T, std::span<const double> u0);

}  // namespace nodeflow
