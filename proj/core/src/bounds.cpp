#include "nodeflow/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "nodeflow/errors.hpp"

namespace nodeflow {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string point_string(std::span<const double> x) {
  std::string s = "(";
  for (std::size_t i = 0; i < x.size(); ++i) s += (i ? ", " : "") + format_double(x[i]);
  return s + ")";
}

int trajectory_steps(const ShallowFlowNet& net, const TrajectoryOptions& opts) {
  return opts.steps > 0 ? opts.steps : net.ode.euler_steps;
}

void check_tbar(double tbar) {
  if (!(tbar > 0.0 && tbar < 1.0)) throw ContractError("tbar must lie in (0, 1)");
}

}  // namespace

CompactGrid CompactGrid::box(Vector lower, Vector upper, double h) {
  if (lower.empty() || lower.size() != upper.size()) throw DimensionError("grid: box bounds differ in length");
  if (!(h > 0.0)) throw ContractError("grid: step must be positive");
  std::vector<std::vector<double>> axes;
  for (std::size_t i = 0; i < lower.size(); ++i) {
    if (!(lower[i] <= upper[i])) throw ContractError("grid: lower bound above upper bound");
    const auto n = static_cast<long>(std::floor((upper[i] - lower[i]) / h + 1e-9));
    std::vector<double> axis;
    for (long k = 0; k <= n; ++k) axis.push_back(lower[i] + static_cast<double>(k) * h);
    // Land exactly on the upper end when it is a grid multiple.
    if (std::abs(axis.back() - upper[i]) <= 1e-9 * std::max(1.0, h)) axis.back() = upper[i];
    axes.push_back(std::move(axis));
  }
  CompactGrid g;
  g.lower = std::move(lower);
  g.upper = std::move(upper);
  g.h = h;
  // First coordinate varies slowest.
  std::vector<std::size_t> idx(axes.size(), 0);
  while (true) {
    Vector p(axes.size());
    for (std::size_t i = 0; i < axes.size(); ++i) p[i] = axes[i][idx[i]];
    g.points.push_back(std::move(p));
    std::size_t k = axes.size();
    while (k > 0) {
      --k;
      if (++idx[k] < axes[k].size()) break;
      idx[k] = 0;
      if (k == 0) return g;
    }
  }
}

CompactGrid CompactGrid::from_points(std::vector<Vector> points) {
  if (points.empty()) throw ContractError("grid: empty point set");
  for (const auto& p : points) {
    if (p.size() != points.front().size()) throw DimensionError("grid: points differ in dimension");
  }
  CompactGrid g;
  g.points = std::move(points);
  return g;
}

CompactGrid parse_grid(const std::string& spec) {
  Vector bounds;
  double h = 0.0;
  bool have_box = false, have_h = false;
  std::istringstream parts(spec);
  std::string part;
  while (std::getline(parts, part, ';')) {
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw ParseError("grid spec: expected key=value in \"" + part + "\"");
    const std::string key = part.substr(0, eq);
    std::istringstream vals(part.substr(eq + 1));
    std::string item;
    if (key == "box") {
      while (std::getline(vals, item, ',')) {
        try {
          std::size_t used = 0;
          bounds.push_back(std::stod(item, &used));
          if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
          throw ParseError("grid spec: bad number \"" + item + "\"");
        }
      }
      have_box = true;
    } else if (key == "h") {
      try {
        h = std::stod(part.substr(eq + 1));
      } catch (const std::exception&) {
        throw ParseError("grid spec: bad step \"" + part.substr(eq + 1) + "\"");
      }
      have_h = true;
    } else {
      throw ParseError("grid spec: unknown key \"" + key + "\"");
    }
  }
  if (!have_box || !have_h || bounds.empty() || bounds.size() % 2) {
    throw ParseError("grid spec must look like \"box=lo1,hi1,lo2,hi2;h=0.05\"");
  }
  Vector lo, hi;
  for (std::size_t i = 0; i < bounds.size(); i += 2) {
    lo.push_back(bounds[i]);
    hi.push_back(bounds[i + 1]);
  }
  return CompactGrid::box(lo, hi, h);
}

std::vector<double> time_grid(double tbar, double tstep) {
  if (!(tbar >= 0.0 && tbar <= 1.0)) throw ContractError("time grid start outside [0, 1]");
  if (!(tstep > 0.0)) throw ContractError("time grid step must be positive");
  std::vector<double> t;
  const auto n = static_cast<long>(std::floor((1.0 - tbar) / tstep + 1e-9));
  for (long k = 0; k <= n; ++k) t.push_back(std::min(1.0, tbar + static_cast<double>(k) * tstep));
  if (1.0 - t.back() > 1e-9) t.push_back(1.0);
  t.back() = 1.0;
  return t;
}

double estimate_epsilon(const VectorFunction& f, const VectorFunction& net, const CompactGrid& grid) {
  if (grid.points.empty()) throw ContractError("estimate_epsilon: empty grid");
  double eps = 0.0;
  for (const auto& x : grid.points) {
    const Vector a = f(x);
    const Vector b = net(x);
    if (a.size() != b.size()) throw DimensionError("estimate_epsilon: target and net outputs differ in length");
    eps = std::max(eps, norm2(subtract(a, b)));
  }
  return eps;
}

double estimate_epsilon(const VectorFunction& f, const Model& net, const CompactGrid& grid) {
  return estimate_epsilon(f, [&net](std::span<const double> x) { return forward(net, x); }, grid);
}

FlowTrajectory hidden_trajectory(const ShallowFlowNet& net, std::span<const double> x,
                                 const TrajectoryOptions& opts) {
  Vector z0 = net.A1 * x;
  for (std::size_t i = 0; i < z0.size(); ++i) z0[i] += net.b1[i];
  return integrate(net.ode, z0, opts.method, trajectory_steps(net, opts));
}

std::vector<std::size_t> time_nodes(std::span<const double> times, int steps) {
  if (times.empty()) throw ContractError("empty time grid");
  std::vector<std::size_t> nodes;
  for (double t : times) nodes.push_back(snap_to_grid(t, steps));
  return nodes;
}

double constant_C(const ShallowFlowNet& net, const CompactGrid& grid, std::span<const double> tgrid,
                  const TrajectoryOptions& opts) {
  if (grid.points.empty()) throw ContractError("constant_C: empty grid");
  const auto nodes = time_nodes(tgrid, trajectory_steps(net, opts));
  double C = 0.0;
  for (const auto& x : grid.points) {
    const auto tr = hidden_trajectory(net, x, opts);
    for (std::size_t k : nodes) C = std::max(C, norm2(tr.states[k]));
  }
  return C;
}

double constant_m(const ShallowFlowNet& net, const CompactGrid& grid, std::span<const double> tgrid, double tbar,
                  const TrajectoryOptions& opts) {
  if (grid.points.empty()) throw ContractError("constant_m: empty grid");
  for (double t : tgrid) {
    if (t < tbar - 1e-12) throw ContractError("constant_m: time grid reaches below tbar");
  }
  const auto nodes = time_nodes(tgrid, trajectory_steps(net, opts));
  double m = std::numeric_limits<double>::infinity();
  for (const auto& x : grid.points) {
    const auto tr = hidden_trajectory(net, x, opts);
    for (std::size_t k : nodes) m = std::min(m, norm2(tr.states[k]));
  }
  return m;
}

double growth_factor(double d) { return d == 0.0 ? 1.0 : std::expm1(d) / d; }

double lower_growth_factor(double d, double tbar) {
  return d == 0.0 ? 1.0 - tbar : std::expm1(d * (1.0 - tbar)) / d;
}

double upper_bound(double epsilon, double C, double sigma_max_delta, double delta) {
  return C * sigma_max_delta * growth_factor(delta) + epsilon;
}

double lower_bound(double c1, double c2, double sigma_min_delta, double delta_prime, double tbar, double epsilon) {
  return c1 * std::exp(delta_prime * (1.0 - tbar)) + c2 * sigma_min_delta * lower_growth_factor(delta_prime, tbar) -
         epsilon;
}

NegativeEtaBound lower_bound_negative_eta(double c1, double c2, double sigma_max_delta, double delta_prime,
                                          double tbar, double epsilon) {
  NegativeEtaBound r;
  r.value = lower_bound(c1, c2, sigma_max_delta, delta_prime, tbar, epsilon);
  r.vacuous = r.value < 0.0;
  return r;
}

std::optional<double> cosine(std::span<const double> u, std::span<const double> v) {
  const double nu = norm2(u);
  const double nv = norm2(v);
  if (nu < kCosineNormFloor || nv < kCosineNormFloor) return std::nullopt;
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

std::optional<double> eta_from_trajectories(const FlowTrajectory& z, const FlowTrajectory& zbar, const Matrix& Delta,
                                            const OmegaBox& box, std::span<const std::size_t> nodes) {
  if (box.dim > kExactVertexDim) {
    throw ContractError("eta: vertex enumeration limited to dimension " + std::to_string(kExactVertexDim));
  }
  if (nodes.empty()) throw ContractError("eta: empty time grid");
  const std::size_t d = box.dim;
  const std::uint64_t count = std::uint64_t{1} << d;
  std::vector<Vector> diagonals;
  for (std::uint64_t mask = 0; mask < count; ++mask) diagonals.push_back(VertexMask::from_index(mask, d).diagonal(box.alpha));

  double best = std::numeric_limits<double>::infinity();
  Vector w(d), dv(d);
  for (std::size_t k : nodes) {
    const Vector& zk = z.states.at(k);
    const Vector& zbk = zbar.states.at(k);
    for (std::size_t i = 0; i < d; ++i) w[i] = zk[i] - zbk[i];
    const double nw = norm2(w);
    if (nw < kCosineNormFloor) return std::nullopt;
    const Vector v = Delta * zk;
    for (const auto& diag : diagonals) {
      for (std::size_t i = 0; i < d; ++i) dv[i] = -diag[i] * v[i];
      const auto c = cosine(w, dv);
      if (!c) return std::nullopt;
      best = std::min(best, *c);
    }
  }
  return best;
}

std::optional<double> eta(const ShallowFlowNet& net, const ShallowFlowNet& netbar, const Matrix& Delta,
                          std::span<const double> x, const OmegaBox& box, double tbar,
                          std::span<const double> tgrid, const TrajectoryOptions& opts) {
  check_tbar(tbar);
  for (double t : tgrid) {
    if (t < tbar - 1e-12 || t > 1.0) throw ContractError("eta: time grid must lie in [tbar, 1]");
  }
  if (Delta.rows() != box.dim || Delta.cols() != box.dim || net.hidden_dim() != box.dim) {
    throw DimensionError("eta: Delta, box and network dimensions differ");
  }
  const int steps = trajectory_steps(net, opts);
  const auto nodes = time_nodes(tgrid, steps);
  TrajectoryOptions bar_opts = opts;
  bar_opts.steps = steps;
  const auto z = hidden_trajectory(net, x, opts);
  const auto zb = hidden_trajectory(netbar, x, bar_opts);
  return eta_from_trajectories(z, zb, Delta, box, nodes);
}

double RegionMap::fraction_green() const {
  if (points.empty()) return 0.0;
  std::size_t green = 0;
  for (const auto& p : points) green += p.holds ? 1 : 0;
  return static_cast<double>(green) / static_cast<double>(points.size());
}

RegionMap region_map(const ShallowFlowNet& net, const ShallowFlowNet& netbar, const Matrix& Delta,
                     const CompactGrid& grid, const OmegaBox& box, const RegionOptions& opts) {
  check_tbar(opts.tbar);
  const auto tgrid = time_grid(opts.tbar, opts.tstep);
  RegionMap map;
  map.points.reserve(grid.size());
  for (const auto& x : grid.points) {
    const auto e = eta(net, netbar, Delta, x, box, opts.tbar, tgrid, opts.trajectories);
    RegionPoint p;
    p.x = x;
    p.undefined = !e.has_value();
    p.eta = e.value_or(kNaN);
    p.holds = e.has_value() && *e > 0.0;
    map.points.push_back(std::move(p));
  }
  return map;
}

// ---------------------------------------------------------------------------

std::string BoundReport::to_json() const {
  nlohmann::ordered_json j;
  j["epsilon"] = epsilon;
  j["delta"] = delta;
  j["delta_prime"] = delta_prime;
  j["sigma_max_Delta"] = sigma_max_Delta;
  j["sigma_min_Delta"] = sigma_min_Delta;
  j["sigma_max_A2"] = sigma_max_A2;
  j["sigma_min_A2"] = sigma_min_A2;
  j["C"] = C;
  j["c1"] = c1;
  j["c2"] = c2;
  j["tbar"] = tbar;
  j["eta_min"] = eta_min;
  j["upper_value"] = upper_value;
  j["lower_value"] = lower_value;
  j["lower_from_negative_eta"] = lower_from_negative_eta;
  j["lower_vacuous"] = lower_vacuous;
  j["empirical_sup"] = empirical_sup;
  j["fraction_green"] = fraction_green;
  j["integrator_disagreement"] = integrator_disagreement;
  j["points"] = points;
  j["lower_checked"] = lower_checked;
  j["lower_violations"] = lower_violations;
  j["upper_violated"] = upper_violated;
  return j.dump();
}

BoundReport verify_bounds(const VectorFunction& f, const ShallowFlowNet& net, const ShallowFlowNet& netbar,
                          const CompactGrid& grid, const OmegaBox& box, const BoundOptions& opts) {
  net.validate();
  netbar.validate();
  check_tbar(opts.tbar);
  if (grid.points.empty()) throw ContractError("verify_bounds: empty grid");
  if (grid.dim() != net.in_dim()) throw DimensionError("verify_bounds: grid and network input dimensions differ");
  if (!(net.A1 == netbar.A1 && net.b1 == netbar.b1 && net.ode.b == netbar.ode.b && net.A2 == netbar.A2 &&
        net.b2 == netbar.b2 && net.ode.activation == netbar.ode.activation) ||
      net.ode.A.rows() != netbar.ode.A.rows()) {
    throw ContractError("verify_bounds: the second network must differ from the first only in A");
  }
  if (box.dim != net.hidden_dim()) throw DimensionError("verify_bounds: box and hidden dimensions differ");

  const Matrix Delta = netbar.ode.A - net.ode.A;
  BoundReport r;
  r.tbar = opts.tbar;
  r.points = grid.size();
  r.delta = delta_star(netbar.ode.A, box).value;
  r.delta_prime = delta_prime(netbar.ode.A, box);
  std::tie(r.sigma_min_Delta, r.sigma_max_Delta) = sigma_extremes(Delta);
  std::tie(r.sigma_min_A2, r.sigma_max_A2) = sigma_extremes(net.A2);
  r.epsilon = f ? estimate_epsilon(f, Model{net}, grid) : 0.0;

  const int steps = trajectory_steps(net, opts.trajectories);
  TrajectoryOptions topts = opts.trajectories;
  topts.steps = steps;
  const std::size_t kbar = snap_to_grid(opts.tbar, steps);
  std::vector<std::size_t> late_nodes;
  for (std::size_t k = kbar; k <= static_cast<std::size_t>(steps); ++k) late_nodes.push_back(k);
  const double alpha = box.alpha;
  const double G = lower_growth_factor(r.delta_prime, opts.tbar);
  const double decay = std::exp(r.delta_prime * (1.0 - opts.tbar));

  double c1_min = std::numeric_limits<double>::infinity();
  double m_min = std::numeric_limits<double>::infinity();
  double M_max = 0.0;
  double eta_min = std::numeric_limits<double>::infinity();
  bool eta_all_positive = true;
  bool eta_any_undefined = false;
  std::size_t green = 0;
  std::size_t sup_index = 0;
  std::optional<std::size_t> lower_witness;

  for (std::size_t p = 0; p < grid.size(); ++p) {
    const Vector& x = grid.points[p];
    const auto z = hidden_trajectory(net, x, topts);
    const auto zb = hidden_trajectory(netbar, x, topts);

    if (opts.crosscheck_steps > 0) {
      TrajectoryOptions coarse = topts;
      coarse.steps = opts.crosscheck_steps;
      const Vector z2 = hidden_trajectory(net, x, coarse).states.back();
      const Vector zb2 = hidden_trajectory(netbar, x, coarse).states.back();
      const double scale = 1.0 + norm2(z.states.back());
      const double dis = std::max(norm2(subtract(z.states.back(), z2)), norm2(subtract(zb.states.back(), zb2))) / scale;
      r.integrator_disagreement = std::max(r.integrator_disagreement, dis);
      if (dis > opts.crosscheck_tol) {
        throw ConvergenceError("verify_bounds: integrators disagree by " + format_double(dis) + " at x = " +
                               point_string(x));
      }
    }

    PointBound pb;
    pb.x = x;
    const Vector diff = subtract(z.states.back(), zb.states.back());
    pb.gap = norm2(diff);
    pb.output_gap = norm2(net.A2 * diff);
    if (pb.output_gap > r.empirical_sup) {
      r.empirical_sup = pb.output_gap;
      sup_index = p;
    }
    for (const auto& s : z.states) r.C = std::max(r.C, norm2(s));
    pb.c1 = norm2(subtract(z.states[kbar], zb.states[kbar]));
    pb.m = std::numeric_limits<double>::infinity();
    for (std::size_t k : late_nodes) {
      const double n = norm2(z.states[k]);
      pb.m = std::min(pb.m, n);
      pb.M = std::max(pb.M, n);
    }
    const auto e = eta_from_trajectories(z, zb, Delta, box, late_nodes);
    pb.eta = e.value_or(kNaN);
    pb.eta_positive = e.has_value() && *e > 0.0;
    if (pb.eta_positive) {
      ++green;
      pb.lower = pb.c1 * decay + alpha * *e * r.sigma_min_Delta * pb.m * G;
      ++r.lower_checked;
      if (pb.gap < pb.lower - opts.tolerance) {
        ++r.lower_violations;
        if (!lower_witness) lower_witness = p;
      }
    }
    if (e) {
      eta_min = std::min(eta_min, *e);
      if (*e <= 0.0) eta_all_positive = false;
    } else {
      eta_any_undefined = true;
      eta_all_positive = false;
    }
    c1_min = std::min(c1_min, pb.c1);
    m_min = std::min(m_min, pb.m);
    M_max = std::max(M_max, pb.M);
    r.per_point.push_back(std::move(pb));
  }

  r.fraction_green = static_cast<double>(green) / static_cast<double>(grid.size());
  r.eta_min = eta_any_undefined || !std::isfinite(eta_min) ? kNaN : eta_min;
  r.c1 = r.sigma_min_A2 * c1_min;
  r.upper_value = r.sigma_max_A2 * upper_bound(0.0, r.C, r.sigma_max_Delta, r.delta) + r.epsilon;
  if (eta_all_positive) {
    r.c2 = alpha * r.sigma_min_A2 * m_min * eta_min;
    r.lower_value = lower_bound(r.c1, r.c2, r.sigma_min_Delta, r.delta_prime, opts.tbar, r.epsilon);
    r.lower_vacuous = r.lower_value < 0.0;
  } else {
    // Undefined points carry no angle information and are left out of min eta.
    const double e = std::isfinite(eta_min) ? eta_min : 0.0;
    r.c2 = r.sigma_min_A2 * M_max * e;
    const auto nb = lower_bound_negative_eta(r.c1, r.c2, r.sigma_max_Delta, r.delta_prime, opts.tbar, r.epsilon);
    r.lower_value = nb.value;
    r.lower_vacuous = nb.vacuous;
    r.lower_from_negative_eta = true;
  }

  const double flow_upper = r.upper_value - r.epsilon;
  r.upper_violated = r.empirical_sup > flow_upper + opts.tolerance * (1.0 + r.upper_value);
  if (opts.throw_on_violation) {
    if (r.upper_violated) {
      throw BoundViolation("upper bound violated at x = " + point_string(grid.points[sup_index]) + ": " +
                           format_double(r.empirical_sup) + " > " + format_double(flow_upper));
    }
    if (lower_witness) {
      const auto& pb = r.per_point[*lower_witness];
      throw BoundViolation("lower bound violated at x = " + point_string(pb.x) + ": " + format_double(pb.gap) +
                           " < " + format_double(pb.lower));
    }
  }
  return r;
}

}  // namespace nodeflow
