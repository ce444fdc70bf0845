#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"
#include "nodeflow/bounds.hpp"
#include "nodeflow/errors.hpp"

using namespace nodeflow;
using testing_helpers::random_vector;

namespace {

ShallowFlowNet wrapped(const Matrix& a, const Vector& b, int steps = 20) {
  const std::size_t d = b.size();
  ShallowFlowNet net;
  net.A1 = Matrix::identity(d);
  net.b1 = Vector(d, 0.0);
  net.ode = NeuralOde(a, b, ActivationSpec::leaky_relu(0.1), steps);
  net.A2 = Matrix::identity(d);
  net.b2 = Vector(d, 0.0);
  return net;
}

ShallowFlowNet uniform_instance(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix a(2, 2);
  for (double& v : a.data()) v = u(rng);
  return wrapped(a, Vector{u(rng), u(rng)});
}

}  // namespace

TEST(Grid, BoxAndParse) {
  const auto g = CompactGrid::box({-1, -1}, {1, 1}, 0.05);
  EXPECT_EQ(g.size(), 41u * 41u);
  EXPECT_EQ(g.points.front(), (Vector{-1, -1}));
  EXPECT_NEAR(g.points.back()[0], 1.0, 1e-12);
  EXPECT_NEAR(g.points.back()[1], 1.0, 1e-12);
  const auto p = parse_grid("box=0,1,-2,2;h=0.5");
  EXPECT_EQ(p.size(), 3u * 9u);
  EXPECT_THROW(parse_grid("box=0,1,2;h=0.5"), ParseError);
  EXPECT_THROW(parse_grid("h=0.5"), ParseError);
  const auto t = time_grid(0.3, 0.05);
  EXPECT_EQ(t.size(), 15u);
  EXPECT_EQ(t.back(), 1.0);
}

TEST(Epsilon, Examples) {
  const auto g = CompactGrid::box({0.0}, {1.0}, 0.1);
  VectorFunction id = [](std::span<const double> x) { return Vector(x.begin(), x.end()); };
  EXPECT_EQ(estimate_epsilon(id, id, g), 0.0);
  VectorFunction shifted = [](std::span<const double> x) { return Vector{x[0] + 3.0}; };
  EXPECT_NEAR(estimate_epsilon(shifted, id, g), 3.0, 1e-15);
  VectorFunction ten = [](std::span<const double> x) { return Vector{10 * x[0]}; };
  VectorFunction zero = [](std::span<const double>) { return Vector{0.0}; };
  EXPECT_NEAR(estimate_epsilon(ten, zero, g), 10.0, 1e-14);
}

TEST(Constants, Examples) {
  const auto grid = CompactGrid::box({-1, -1}, {1, 1}, 0.5);
  const auto tg = time_grid(0.0, 0.05);
  const ShallowFlowNet zero = wrapped(Matrix(2, 2), Vector(2, 0.0));
  EXPECT_NEAR(constant_C(zero, grid, tg), std::sqrt(2.0), 1e-15);

  const ShallowFlowNet lin = wrapped(Matrix{{1.0}}, Vector{0.0});
  const auto g1 = CompactGrid::from_points({{0.5}, {2.0}});
  EXPECT_NEAR(constant_C(lin, g1, tg), std::pow(1.05, 20) * 2.0, 1e-13);

  const std::vector<double> t1{1.0};
  EXPECT_NEAR(constant_m(lin, g1, t1, 1.0), std::pow(1.05, 20) * 0.5, 1e-13);
}

TEST(UpperBound, Examples) {
  EXPECT_EQ(upper_bound(0.25, 3.0, 0.0, 0.7), 0.25);
  EXPECT_NEAR(upper_bound(0.1, 2.0, 0.5, 0.0), 2.0 * 0.5 + 0.1, 1e-15);
  EXPECT_NEAR(upper_bound(0.0, 1.0, 1.0, 1.0), std::exp(1.0) - 1.0, 1e-15);
  // removable singularity: continuous through 0
  for (double d : {1e-4, 1e-8, 1e-12, -1e-8}) EXPECT_NEAR(growth_factor(d), std::expm1(d) / d, 1e-12);
  EXPECT_EQ(growth_factor(0.0), 1.0);
  EXPECT_NEAR(growth_factor(-2.0), (std::exp(-2.0) - 1.0) / -2.0, 1e-15);
  EXPECT_EQ(lower_growth_factor(0.0, 0.3), 0.7);
}

TEST(LowerBound, Examples) {
  EXPECT_EQ(lower_bound(0.0, 1.0, 0.0, 0.4, 0.3, 0.2), -0.2);
  EXPECT_NEAR(lower_bound(0.0, 1.0, 1.0, 0.0, 0.3, 0.0), 0.7, 1e-15);
  EXPECT_NEAR(lower_bound(2.0, 0.0, 0.0, 0.5, 0.3, 0.0), 2.0 * std::exp(0.35), 1e-15);

  const auto reduced = lower_bound_negative_eta(1.5, 0.0, 0.8, 0.2, 0.3, 0.1);
  EXPECT_NEAR(reduced.value, 1.5 * std::exp(0.2 * 0.7) - 0.1, 1e-15);
  EXPECT_FALSE(reduced.vacuous);
  const auto vac = lower_bound_negative_eta(0.0, -1.0, 0.5, 0.2, 0.3, 0.0);
  EXPECT_LT(vac.value, 0.0);
  EXPECT_TRUE(vac.vacuous);
}

TEST(Eta, CosineBasics) {
  EXPECT_FALSE(cosine(Vector{0, 0}, Vector{1, 0}).has_value());
  EXPECT_NEAR(*cosine(Vector{1, 0}, Vector{0, 2}), 0.0, 1e-15);
  std::mt19937_64 rng(51);
  for (int i = 0; i < 20; ++i) {
    const Vector u = random_vector(3, rng), v = random_vector(3, rng);
    EXPECT_NEAR(*cosine(u, v), *cosine(scaled(2.5, u), scaled(0.1, v)), 1e-14);
  }
}

TEST(Eta, ZeroDeltaUndefined) {
  const ShallowFlowNet net = uniform_instance(1);
  const auto tg = time_grid(0.3, 0.05);
  EXPECT_FALSE(eta(net, net, Matrix(2, 2), Vector{0.3, 0.4}, OmegaBox(2, 0.1), 0.3, tg).has_value());
}

TEST(Eta, ScalarSign) {
  // d = 1: z - zbar and -D Delta z always share their sign, so the cosine is 1
  // for either sign of Delta.
  const ShallowFlowNet net = wrapped(Matrix{{0.5}}, Vector{0.2});
  const Matrix delta{{-0.3}};
  const ShallowFlowNet bar = stabilized(net, delta);
  const auto tg = time_grid(0.3, 0.05);
  const auto e = eta(net, bar, delta, Vector{0.6}, OmegaBox(1, 0.1), 0.3, tg);
  ASSERT_TRUE(e.has_value());
  EXPECT_NEAR(*e, 1.0, 1e-15);
  const auto neg = eta(net, stabilized(net, Matrix{{0.3}}), Matrix{{0.3}}, Vector{0.6}, OmegaBox(1, 0.1), 0.3, tg);
  ASSERT_TRUE(neg.has_value());
  EXPECT_NEAR(*neg, 1.0, 1e-15);
}

TEST(Region, ZeroDeltaAllUndefined) {
  const ShallowFlowNet net = uniform_instance(2);
  const auto grid = CompactGrid::box({-1, -1}, {1, 1}, 0.25);
  const auto r = region_map(net, net, Matrix(2, 2), grid, OmegaBox(2, 0.1));
  EXPECT_EQ(r.fraction_green(), 0.0);
  for (const auto& p : r.points) {
    EXPECT_TRUE(p.undefined);
    EXPECT_FALSE(p.holds);
  }
}

TEST(Region, ConsistentFlagsAndDeterministic) {
  const ShallowFlowNet net = uniform_instance(3);
  const OmegaBox box(2, 0.1);
  const double ds = delta_star(net.ode.A, box).value;
  const auto st = stabilize(net.ode.A, box, ds - 0.05);
  const auto bar = stabilized(net, st);
  const auto grid = CompactGrid::box({-1, -1}, {1, 1}, 0.1);
  const auto a = region_map(net, bar, st.Delta, grid, box);
  const auto b = region_map(net, bar, st.Delta, grid, box);
  std::size_t holds = 0;
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    const auto& p = a.points[i];
    EXPECT_FALSE(p.holds && p.undefined);
    if (!p.undefined) EXPECT_EQ(p.holds, p.eta > 0.0);
    holds += p.holds;
    EXPECT_EQ(p.holds, b.points[i].holds);
  }
  EXPECT_DOUBLE_EQ(a.fraction_green(), static_cast<double>(holds) / static_cast<double>(a.points.size()));

  const auto single = region_map(net, bar, st.Delta, CompactGrid::from_points({{0.2, -0.4}}), box);
  EXPECT_EQ(single.points.size(), 1u);
}

TEST(Verify, ZeroDelta) {
  const ShallowFlowNet net = uniform_instance(4);
  const auto grid = CompactGrid::box({-1, -1}, {1, 1}, 0.5);
  const auto r = verify_bounds({}, net, net, grid, OmegaBox(2, 0.1));
  EXPECT_EQ(r.empirical_sup, 0.0);
  EXPECT_EQ(r.epsilon, 0.0);
  EXPECT_EQ(r.upper_value, 0.0);
  EXPECT_FALSE(r.upper_violated);
  EXPECT_EQ(r.lower_violations, 0u);
}

TEST(Verify, RandomInstancesSound) {
  const OmegaBox box(2, 0.1);
  const auto grid = CompactGrid::box({-1, -1}, {1, 1}, 0.2);
  for (std::uint64_t seed = 10; seed < 13; ++seed) {
    const ShallowFlowNet net = uniform_instance(seed);
    const double ds = delta_star(net.ode.A, box).value;
    for (double off : {0.01, 0.09}) {
      const auto st = stabilize(net.ode.A, box, ds - off);
      const auto r = verify_bounds({}, net, stabilized(net, st), grid, box);
      EXPECT_LE(r.empirical_sup, r.upper_value + 1e-8);
      EXPECT_EQ(r.lower_violations, 0u);
      EXPECT_LT(r.integrator_disagreement, 1e-6);
      for (const auto& p : r.per_point)
        if (p.eta_positive) EXPECT_GE(p.gap, p.lower - 1e-8);
    }
  }
}

TEST(Verify, Preconditions) {
  const ShallowFlowNet net = uniform_instance(5);
  ShallowFlowNet other = net;
  other.b2 = {100.0, 0.0};
  const auto grid = CompactGrid::box({-1, -1}, {1, 1}, 0.5);
  EXPECT_THROW(verify_bounds({}, net, other, grid, OmegaBox(2, 0.1)), ContractError);

  const OmegaBox box(2, 0.1);
  const auto st = stabilize(net.ode.A, box, delta_star(net.ode.A, box).value - 0.05);
  BoundOptions strict;
  strict.crosscheck_tol = 1e-30;
  EXPECT_THROW(verify_bounds({}, net, stabilized(net, st), grid, box, strict), ConvergenceError);
}

TEST(Verify, TargetEpsilon) {
  const ShallowFlowNet net = uniform_instance(7);
  VectorFunction f = [&](std::span<const double> x) {
    Vector y = forward(net, x);
    y[0] += 0.5;
    return y;
  };
  const auto grid = CompactGrid::box({-1, -1}, {1, 1}, 0.5);
  const auto r = verify_bounds(f, net, net, grid, OmegaBox(2, 0.1));
  EXPECT_NEAR(r.epsilon, 0.5, 1e-12);
  EXPECT_NEAR(r.upper_value, 0.5, 1e-12);
}

TEST(Verify, JsonHasFields) {
  const ShallowFlowNet net = uniform_instance(6);
  const auto r = verify_bounds({}, net, net, CompactGrid::from_points({{0.1, 0.2}}), OmegaBox(2, 0.1));
  const std::string j = r.to_json();
  for (const char* key : {"\"epsilon\"", "\"upper_value\"", "\"lower_value\"", "\"empirical_sup\"", "\"C\""})
    EXPECT_NE(j.find(key), std::string::npos) << key;
}
