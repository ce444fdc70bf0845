#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"
#include "nodeflow/errors.hpp"
#include "nodeflow/flow.hpp"
#include "nodeflow/spectral.hpp"

using namespace nodeflow;
using testing_helpers::random_matrix;
using testing_helpers::random_vector;

namespace {

NeuralOde scalar_ode(double a, double b, int steps = 20) {
  return NeuralOde(Matrix{{a}}, Vector{b}, ActivationSpec::leaky_relu(0.1), steps);
}

}  // namespace

TEST(Activation, Examples) {
  const auto lr = ActivationSpec::leaky_relu(0.1);
  EXPECT_DOUBLE_EQ(act(lr, -2.0), -0.2);
  EXPECT_DOUBLE_EQ(act(lr, 3.0), 3.0);
  EXPECT_DOUBLE_EQ(act_deriv(lr, 0.0), 1.0);

  const auto sm = ActivationSpec::smoothed(0.1);
  EXPECT_EQ(act(sm, 0.0), 0.0);
  EXPECT_NEAR(sm.zbar(), std::atanh(std::sqrt(0.9)), 1e-15);
  EXPECT_NEAR(act(sm, -sm.zbar()), std::tanh(-sm.zbar()), 1e-15);
  // continuous at the lower kink
  const double z = -sm.zbar();
  EXPECT_NEAR(act(sm, z - 1e-12), act(sm, z), 1e-11);
  EXPECT_NEAR(act_deriv(sm, z - 1e-9), act_deriv(sm, z + 1e-9), 1e-8);
}

TEST(Activation, DerivativeRange) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  for (const auto& spec : {ActivationSpec::leaky_relu(0.1), ActivationSpec::smoothed(0.1)}) {
    for (int i = 0; i < 100000; ++i) {
      const double dv = act_deriv(spec, u(rng));
      ASSERT_GE(dv, 0.1 - 1e-15);
      ASSERT_LE(dv, 1.0);
    }
  }
}

TEST(Flow, LinearRegimeClosedForm) {
  const auto ode = scalar_ode(1.0, 0.0);
  const Vector u0{1.0};
  EXPECT_NEAR(flow(ode, u0)[0], std::pow(1.05, 20), 1e-14);
  EXPECT_NEAR(flow(ode, u0)[0], 2.6532977051, 1e-10);

  const auto traj = flow_trajectory(ode, u0);
  ASSERT_EQ(traj.states.size(), 21u);
  EXPECT_EQ(traj.states.front(), u0);
  EXPECT_EQ(traj.times.front(), 0.0);
  EXPECT_EQ(traj.times.back(), 1.0);
}

TEST(Flow, FixedPointAtZero) {
  std::mt19937_64 rng(22);
  NeuralOde ode(random_matrix(3, 3, rng), Vector(3, 0.0), ActivationSpec::smoothed(0.1));
  EXPECT_EQ(flow(ode, Vector(3, 0.0)), Vector(3, 0.0));
}

TEST(Flow, EulerRecurrenceExact) {
  std::mt19937_64 rng(23);
  NeuralOde ode(random_matrix(3, 3, rng), random_vector(3, rng), ActivationSpec::leaky_relu(0.1));
  const auto traj = flow_trajectory(ode, random_vector(3, rng));
  for (std::size_t k = 0; k + 1 < traj.states.size(); ++k) {
    const Vector f = ode.field(traj.states[k]);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(traj.states[k + 1][i], traj.states[k][i] + (1.0 / 20) * f[i]);
  }
}

TEST(Flow, DimensionAndOverflow) {
  const auto ode = scalar_ode(1.0, 0.0);
  EXPECT_THROW(flow(ode, Vector{1.0, 2.0}), DimensionError);
  const auto big = scalar_ode(1e300, 0.0);
  EXPECT_THROW(flow(big, Vector{1e300}), OverflowError);
}

TEST(FlowAtTimes, Examples) {
  const auto ode = scalar_ode(1.0, 0.0);
  const Vector u0{1.0};
  const std::vector<double> t0{0.0}, t1{1.0}, th{0.5};
  EXPECT_EQ(flow_at_times(ode, u0, t0)[0], u0);
  EXPECT_EQ(flow_at_times(ode, u0, t1)[0], flow(ode, u0));
  EXPECT_NEAR(flow_at_times(ode, u0, th)[0][0], std::pow(1.05, 10), 1e-14);
  EXPECT_THROW(flow_at_times(ode, u0, std::vector<double>{}), ContractError);
}

TEST(FlowAtTimes, SemigroupBitwise) {
  std::mt19937_64 rng(24);
  NeuralOde ode(random_matrix(3, 3, rng), random_vector(3, rng), ActivationSpec::smoothed(0.1));
  const Vector u0 = random_vector(3, rng);
  const std::vector<double> t{0.3};
  const Vector mid = flow_at_times(ode, u0, t)[0];
  // continue the remaining 14 steps by hand
  Vector u = mid;
  for (int k = 0; k < 14; ++k) {
    const Vector f = ode.field(u);
    for (std::size_t i = 0; i < u.size(); ++i) u[i] += (1.0 / 20) * f[i];
  }
  EXPECT_EQ(u, flow(ode, u0));
}

TEST(ScalarFlow, Examples) {
  const auto spec = ActivationSpec::leaky_relu(0.1);
  EXPECT_EQ(scalar_flow_activation(0.0, spec, 20)(0.0), 0.0);
  EXPECT_NEAR(scalar_flow_activation(0.0, spec, 20)(1.0), std::pow(1.05, 20), 1e-14);

  // entrywise use equals the uncoupled system A = I, b = lambda e
  const double lambda = -0.4;
  const auto phi = scalar_flow_activation(lambda, spec, 20);
  NeuralOde ode(Matrix::identity(3), Vector(3, lambda), spec, 20);
  const Vector u0{-1.0, 0.2, 2.0};
  const Vector ref = flow(ode, u0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(phi(u0[i]), ref[i], 1e-14);
}

TEST(PiecewiseFlow, Examples) {
  std::mt19937_64 rng(25);
  NeuralOde ode(random_matrix(2, 2, rng), random_vector(2, rng), ActivationSpec::smoothed(0.1));
  const Vector u0 = random_vector(2, rng);
  EXPECT_EQ(piecewise_flow(ode, 0.0, 1.0, u0), flow(ode, u0));

  const Vector r = piecewise_flow(ode, -std::log(2.0), 1.0 + std::log(3.0), u0);
  const Vector ref = flow(ode, scaled(2.0, u0));
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(r[i], 3.0 * ref[i], 1e-14 * (1 + std::abs(ref[i])));

  NeuralOde zero(Matrix(2, 2), Vector(2, 0.0), ActivationSpec::leaky_relu(0.1));
  const Vector z = piecewise_flow(zero, -0.5, 1.7, u0);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(z[i], std::exp(0.7) * std::exp(0.5) * u0[i], 1e-14);
}

TEST(FlowProperties, LipschitzBound) {
  std::mt19937_64 rng(26);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  int violations = 0;
  for (int k = 0; k < 50; ++k) {
    const std::size_t d = 1 + k % 4;
    const auto spec = k % 2 ? ActivationSpec::smoothed(0.1) : ActivationSpec::leaky_relu(0.1);
    NeuralOde ode(random_matrix(d, d, rng), random_vector(d, rng), spec, kReferenceSteps);
    const double L = std::exp(delta_star(ode.A, OmegaBox(d, 0.1)).value);
    for (int p = 0; p < 200; ++p) {
      const Vector u = random_vector(d, rng), v = random_vector(d, rng);
      if (norm2(subtract(flow(ode, u), flow(ode, v))) > L * norm2(subtract(u, v)) * (1 + 1e-6)) ++violations;
    }
  }
  EXPECT_EQ(violations, 0);
}

TEST(FlowProperties, EulerFirstOrder) {
  std::mt19937_64 rng(27);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 10; ++k) {
    // positive A, b and u0 keep every state positive: linear and smooth
    const std::size_t d = 2 + k % 3;
    Matrix a(d, d);
    for (double& v : a.data()) v = 0.5 * u(rng);
    Vector b(d), u0(d);
    for (std::size_t i = 0; i < d; ++i) b[i] = 0.1 + u(rng), u0[i] = 0.5 + u(rng);
    auto at = [&](int n) { return flow(NeuralOde(a, b, ActivationSpec::leaky_relu(0.1), n), u0); };
    double prev = -1.0;
    for (int n : {20, 40, 80, 160}) {
      const double e = norm2(subtract(at(n), at(2 * n)));
      if (prev > 0) {
        EXPECT_GE(e / prev, 0.4);
        EXPECT_LE(e / prev, 0.6);
      }
      prev = e;
    }
  }
}

TEST(FlowProperties, GronwallUpperBound) {
  std::mt19937_64 rng(28);
  std::uniform_real_distribution<double> u(0.05, 2.0);
  for (int k = 0; k < 30; ++k) {
    const double a = u(rng), b = u(rng), u0 = u(rng);
    for (int n : {1, 5, 20, 100, 1000}) {
      const auto traj = flow_trajectory(scalar_ode(a, b, n), Vector{u0});
      for (std::size_t j = 0; j < traj.states.size(); ++j) {
        const double t = traj.times[j];
        // u' = a u + b (states stay positive so the activation is the identity)
        const double exact = std::exp(a * t) * u0 + (b / a) * (std::exp(a * t) - 1.0);
        EXPECT_LE(traj.states[j][0], exact * (1 + 1e-14));
      }
    }
  }
}

TEST(FlowProperties, Rk4AgreesWithFineEuler) {
  std::mt19937_64 rng(29);
  NeuralOde ode(random_matrix(3, 3, rng), random_vector(3, rng), ActivationSpec::smoothed(0.1));
  const Vector u0 = random_vector(3, rng);
  const Vector r = reference_flow(ode, u0);
  const Vector e = integrate(ode, u0, Integrator::euler, 20000).states.back();
  EXPECT_LT(norm2(subtract(r, e)), 1e-3);
  const Vector r2 = integrate(ode, u0, Integrator::rk4, 500).states.back();
  EXPECT_LT(norm2(subtract(r, r2)), 1e-6);
}
