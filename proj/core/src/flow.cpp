#include "nodeflow/flow.hpp"

#include <cmath>

#include "nodeflow/errors.hpp"

namespace nodeflow {

const char* to_string(ActivationKind k) {
  return k == ActivationKind::leaky_relu ? "leaky-relu" : "smoothed-leaky-relu";
}

ActivationKind parse_activation_kind(const std::string& s) {
  if (s == "leaky-relu") return ActivationKind::leaky_relu;
  if (s == "smoothed-leaky-relu" || s == "smoothed") return ActivationKind::smoothed_leaky_relu;
  throw ParseError("unknown activation kind \"" + s + "\"");
}

ActivationSpec::ActivationSpec(ActivationKind kind, double alpha) : kind_(kind), alpha_(alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ContractError("activation: alpha must lie in (0, 1]");
  if (kind == ActivationKind::smoothed_leaky_relu) {
    // sech^2(zbar) = alpha  <=>  tanh(zbar) = sqrt(1 - alpha)
    zbar_ = std::atanh(std::sqrt(1.0 - alpha));
    beta_ = std::tanh(-zbar_) + alpha * zbar_;
    if (!(zbar_ > 0.0)) throw ContractError("smoothed activation needs alpha < 1");
  }
}

ActivationSpec ActivationSpec::leaky_relu(double alpha) { return {ActivationKind::leaky_relu, alpha}; }
ActivationSpec ActivationSpec::smoothed(double alpha) { return {ActivationKind::smoothed_leaky_relu, alpha}; }

double act(const ActivationSpec& spec, double z) { return spec(z); }
double act_deriv(const ActivationSpec& spec, double z) { return spec.derivative(z); }

NeuralOde::NeuralOde(Matrix a, Vector bias, ActivationSpec act, int steps)
    : A(std::move(a)), b(std::move(bias)), activation(act), euler_steps(steps) {
  if (!A.square() || A.rows() != b.size()) {
    throw DimensionError("NeuralOde: A is " + std::to_string(A.rows()) + "x" + std::to_string(A.cols()) +
                         " but b has length " + std::to_string(b.size()));
  }
  if (steps < 1) throw ContractError("NeuralOde: need at least one integration step");
}

Vector NeuralOde::field(std::span<const double> u) const {
  Vector f(b.size());
  field_into(u, f);
  return f;
}

void NeuralOde::field_into(std::span<const double> u, std::span<double> out) const {
  const std::size_t d = b.size();
  for (std::size_t i = 0; i < d; ++i) out[i] = activation(dot(A.row(i), u) + b[i]);
}

namespace {

void check_state(std::span<const double> u, int step) {
  if (!all_finite(u)) throw OverflowError("flow: non-finite state at step " + std::to_string(step));
}

void check_input(const NeuralOde& ode, std::span<const double> u0) {
  if (u0.size() != ode.dim()) {
    throw DimensionError("flow: initial state has length " + std::to_string(u0.size()) + ", expected " +
                         std::to_string(ode.dim()));
  }
}

// Scratch space reused across steps.
struct Work {
  explicit Work(std::size_t d) : k1(d), k2(d), k3(d), k4(d), tmp(d) {}
  Vector k1, k2, k3, k4, tmp;
};

void euler_step(const NeuralOde& ode, Vector& u, double h, Work& w) {
  const std::size_t d = u.size();
  ode.field_into(u, w.k1);
  for (std::size_t i = 0; i < d; ++i) u[i] += h * w.k1[i];
}

void rk4_step(const NeuralOde& ode, Vector& u, double h, Work& w) {
  const std::size_t d = u.size();
  ode.field_into(u, w.k1);
  for (std::size_t i = 0; i < d; ++i) w.tmp[i] = u[i] + 0.5 * h * w.k1[i];
  ode.field_into(w.tmp, w.k2);
  for (std::size_t i = 0; i < d; ++i) w.tmp[i] = u[i] + 0.5 * h * w.k2[i];
  ode.field_into(w.tmp, w.k3);
  for (std::size_t i = 0; i < d; ++i) w.tmp[i] = u[i] + h * w.k3[i];
  ode.field_into(w.tmp, w.k4);
  for (std::size_t i = 0; i < d; ++i) u[i] += h / 6.0 * (w.k1[i] + 2.0 * w.k2[i] + 2.0 * w.k3[i] + w.k4[i]);
}

}  // namespace

FlowTrajectory integrate(const NeuralOde& ode, std::span<const double> u0, Integrator method, int steps) {
  check_input(ode, u0);
  if (steps < 1) throw ContractError("integrate: need at least one step");
  const double h = 1.0 / steps;
  FlowTrajectory tr;
  tr.times.reserve(steps + 1);
  tr.states.reserve(steps + 1);
  Vector u(u0.begin(), u0.end());
  Work w(u.size());
  tr.times.push_back(0.0);
  tr.states.push_back(u);
  for (int k = 0; k < steps; ++k) {
    if (method == Integrator::euler)
      euler_step(ode, u, h, w);
    else
      rk4_step(ode, u, h, w);
    check_state(u, k + 1);
    tr.times.push_back(static_cast<double>(k + 1) / steps);
    tr.states.push_back(u);
  }
  return tr;
}

Vector flow(const NeuralOde& ode, std::span<const double> u0) {
  check_input(ode, u0);
  const double h = 1.0 / ode.euler_steps;
  Vector u(u0.begin(), u0.end());
  Work w(u.size());
  for (int k = 0; k < ode.euler_steps; ++k) {
    euler_step(ode, u, h, w);
    check_state(u, k + 1);
  }
  return u;
}

FlowTrajectory flow_trajectory(const NeuralOde& ode, std::span<const double> u0) {
  return integrate(ode, u0, Integrator::euler, ode.euler_steps);
}

Vector reference_flow(const NeuralOde& ode, std::span<const double> u0) {
  return integrate(ode, u0, Integrator::rk4, kReferenceSteps).states.back();
}

std::size_t snap_to_grid(double t, int steps) {
  if (!(t >= 0.0 && t <= 1.0)) throw ContractError("time " + format_double(t) + " outside [0, 1]");
  return static_cast<std::size_t>(std::lround(t * steps));
}

std::vector<Vector> flow_at_times(const NeuralOde& ode, std::span<const double> u0, std::span<const double> times) {
  if (times.empty()) throw ContractError("flow_at_times: empty time list");
  std::vector<std::size_t> nodes;
  nodes.reserve(times.size());
  for (double t : times) nodes.push_back(snap_to_grid(t, ode.euler_steps));
  const auto tr = flow_trajectory(ode, u0);
  std::vector<Vector> out;
  out.reserve(nodes.size());
  for (std::size_t k : nodes) out.push_back(tr.states[k]);
  return out;
}

std::function<double(double)> scalar_flow_activation(double lambda, const ActivationSpec& spec, int steps) {
  if (steps < 1) throw ContractError("scalar_flow_activation: need at least one step");
  return [lambda, spec, steps](double u) {
    const double h = 1.0 / steps;
    for (int k = 0; k < steps; ++k) u += h * spec(u + lambda);
    return u;
  };
}

Vector piecewise_flow(const NeuralOde& ode, double t0, double T, std::span<const double> u0) {
  if (t0 > 0.0) throw ContractError("piecewise_flow: t0 must be <= 0");
  if (T < 1.0) throw ContractError("piecewise_flow: T must be >= 1");
  Vector v = scaled(std::exp(-t0), u0);
  Vector out = flow(ode, v);
  const double s = std::exp(T - 1.0);
  for (double& x : out) x *= s;
  return out;
}

}  // namespace nodeflow
