#include "nodeflow/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "nodeflow/errors.hpp"

namespace nodeflow {

OmegaBox::OmegaBox(std::size_t d, double a) : dim(d), alpha(a) {
  if (!(a > 0.0 && a <= 1.0)) throw ContractError("OmegaBox: alpha must lie in (0, 1]");
}

VertexMask VertexMask::from_index(std::uint64_t index, std::size_t dim) {
  VertexMask m;
  m.bits.resize(dim);
  for (std::size_t i = 0; i < dim; ++i) m.bits[i] = i < 64 && ((index >> i) & 1U);
  return m;
}

std::uint64_t VertexMask::index() const {
  std::uint64_t idx = 0;
  for (std::size_t i = 0; i < bits.size() && i < 64; ++i)
    if (bits[i]) idx |= (std::uint64_t{1} << i);
  return idx;
}

Vector VertexMask::diagonal(double alpha) const {
  Vector d(bits.size());
  for (std::size_t i = 0; i < bits.size(); ++i) d[i] = bits[i] ? 1.0 : alpha;
  return d;
}

std::string VertexMask::to_string() const {
  std::string s;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (i) s += ',';
    s += bits[i] ? '1' : '0';
  }
  return s;
}

std::vector<VertexMask> box_vertices(const OmegaBox& box) {
  if (box.dim > 24) throw ContractError("box_vertices: too many vertices to enumerate");
  std::vector<VertexMask> out;
  const std::uint64_t count = std::uint64_t{1} << box.dim;
  out.reserve(count);
  for (std::uint64_t k = 0; k < count; ++k) out.push_back(VertexMask::from_index(k, box.dim));
  return out;
}

const char* to_string(MaxMethod m) {
  return m == MaxMethod::exact_enumeration ? "exact-enumeration" : "heuristic";
}

namespace {

// lambda_max(sym(sign * D M)) with D = diag(d).
double vertex_value(const Matrix& m, std::span<const double> d, double sign) {
  const std::size_t n = m.rows();
  Matrix s(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      const double v = 0.5 * sign * (d[i] * m(i, j) + d[j] * m(j, i));
      s(i, j) = v;
      s(j, i) = v;
    }
  }
  return eig_sym(s).values.back();
}

void check_dims(const Matrix& a, const OmegaBox& box, const char* what) {
  if (!a.square() || a.rows() != box.dim) {
    throw DimensionError(std::string(what) + ": matrix is " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " but the box has dimension " + std::to_string(box.dim));
  }
}

// Maximizes lambda_max(sym(sign * D M)) over the vertices of the box.
LogNormMaxResult max_over_vertices(const Matrix& m, const OmegaBox& box, double sign,
                                   const LogNormMaxOptions& opts) {
  const std::size_t d = box.dim;
  LogNormMaxResult best;
  best.value = -std::numeric_limits<double>::infinity();

  if (d == 0) {
    best.value = 0.0;
    return best;
  }

  if (d <= opts.exact_dim) {
    best.method = MaxMethod::exact_enumeration;
    const std::uint64_t count = std::uint64_t{1} << d;
    std::uint64_t best_idx = 0;
    for (std::uint64_t k = 0; k < count; ++k) {
      const auto diag = VertexMask::from_index(k, d).diagonal(box.alpha);
      const double v = vertex_value(m, diag, sign);
      if (v > best.value) {  // strict: ties keep the smaller index
        best.value = v;
        best_idx = k;
      }
    }
    best.argmax = VertexMask::from_index(best_idx, d);
  } else {
    best.method = MaxMethod::heuristic;
    std::mt19937_64 rng(opts.seed);
    std::bernoulli_distribution coin(0.5);
    auto ascend = [&](VertexMask mask) {
      double value = vertex_value(m, mask.diagonal(box.alpha), sign);
      bool improved = true;
      while (improved) {
        improved = false;
        for (std::size_t i = 0; i < d; ++i) {
          mask.bits[i] = !mask.bits[i];
          const double v = vertex_value(m, mask.diagonal(box.alpha), sign);
          if (v > value) {
            value = v;
            improved = true;
          } else {
            mask.bits[i] = !mask.bits[i];
          }
        }
      }
      return std::make_pair(value, mask);
    };
    VertexMask start;
    start.bits.assign(d, true);
    for (int s = 0; s <= opts.random_starts; ++s) {
      if (s > 0)
        for (std::size_t i = 0; i < d; ++i) start.bits[i] = coin(rng);
      auto [v, mask] = ascend(start);
      if (v > best.value) {
        best.value = v;
        best.argmax = std::move(mask);
      }
    }
  }

  const auto diag = best.argmax.diagonal(box.alpha);
  const std::size_t n = m.rows();
  Matrix s(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) s(i, j) = 0.5 * sign * (diag[i] * m(i, j) + diag[j] * m(j, i));
  auto [lam, vec] = lambda_max(s);
  best.value = lam;
  best.leading_vector = std::move(vec);
  return best;
}

// ---------------------------------------------------------------------------
// Stabilization.

struct DualSolve {
  Matrix M;  // primal point A - sum_k D_k Y_k
  int iterations = 0;
  bool converged = false;
};

Matrix project_psd(const Matrix& y) {
  const auto e = eig_sym(sym(y));
  const std::size_t n = y.rows();
  Matrix r(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    const double lam = e.values[k];
    if (lam <= 0.0) continue;
    for (std::size_t i = 0; i < n; ++i) {
      const double vi = lam * e.vectors(i, k);
      for (std::size_t j = 0; j < n; ++j) r(i, j) += vi * e.vectors(j, k);
    }
  }
  return sym(r);
}

// sum_k D_k Y_k
Matrix combine(const std::vector<Vector>& diags, const std::vector<Matrix>& ys, std::size_t n) {
  Matrix s(n, n);
  for (std::size_t k = 0; k < ys.size(); ++k)
    for (std::size_t i = 0; i < n; ++i) {
      const double di = diags[k][i];
      for (std::size_t j = 0; j < n; ++j) s(i, j) += di * ys[k](i, j);
    }
  return s;
}

double frob_inner(const Matrix& a, const Matrix& b) { return dot(a.data(), b.data()); }

// Accelerated projected gradient ascent on the dual of
//   min 1/2 ||M - A||_F^2  s.t.  sym(D_k M) <= delta I  for every k in the working set.
DualSolve solve_dual(const Matrix& a, double delta, const std::vector<Vector>& diags, std::vector<Matrix>& ys,
                     int budget, double scale) {
  const std::size_t n = a.rows();
  const std::size_t w = diags.size();
  const double step = 1.0 / static_cast<double>(w);

  auto dual_value = [&](const std::vector<Matrix>& y) {
    const Matrix s = combine(diags, y, n);
    double tr = 0.0;
    for (const auto& yk : y)
      for (std::size_t i = 0; i < n; ++i) tr += yk(i, i);
    return frob_inner(s, a) - 0.5 * frob_inner(s, s) - delta * tr;
  };
  auto gradient = [&](const Matrix& m, std::size_t k) {
    Matrix g(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) g(i, j) = 0.5 * (diags[k][i] * m(i, j) + diags[k][j] * m(j, i));
    for (std::size_t i = 0; i < n; ++i) g(i, i) -= delta;
    return g;
  };

  DualSolve out;
  std::vector<Matrix> z = ys;
  std::vector<Matrix> prev = ys;
  double theta = 1.0;
  double q_prev = dual_value(ys);

  for (int it = 0; it < budget; ++it) {
    const Matrix mz = a - combine(diags, z, n);
    for (std::size_t k = 0; k < w; ++k) {
      Matrix g = gradient(mz, k);
      g *= step;
      ys[k] = project_psd(z[k] + g);
    }
    out.iterations = it + 1;

    const double q = dual_value(ys);
    const double theta_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * theta * theta));
    if (q < q_prev) {
      // Function-value restart: drop momentum.
      theta = 1.0;
      z = ys;
    } else {
      const double beta = (theta - 1.0) / theta_next;
      theta = theta_next;
      for (std::size_t k = 0; k < w; ++k) {
        Matrix diff = ys[k] - prev[k];
        diff *= beta;
        z[k] = ys[k] + diff;
      }
    }
    prev = ys;
    q_prev = q;

    if ((it + 1) % 10 == 0) {
      const Matrix m = a - combine(diags, ys, n);
      double viol = -std::numeric_limits<double>::infinity();
      double slack = 0.0;
      for (std::size_t k = 0; k < w; ++k) {
        const Matrix g = gradient(m, k);
        viol = std::max(viol, eig_sym(g).values.back());
        slack += std::abs(frob_inner(ys[k], g));
      }
      if (viol <= 1e-11 * scale && slack <= 1e-11 * scale * scale) {
        out.converged = true;
        break;
      }
    }
  }
  out.M = a - combine(diags, ys, n);
  return out;
}

struct Candidate {
  const char* source = "";
  Matrix delta;
  double achieved = 0.0;
  bool feasible = false;
};

// Finds s with delta_star(A + s P) = delta by bracketing and bisection.
Candidate hit_target(const Matrix& a, const Matrix& p, const OmegaBox& box, double delta, double tol,
                     const LogNormMaxOptions& lopts) {
  auto g = [&](double s) {
    Matrix sp = p;
    sp *= s;
    return max_over_vertices(a + sp, box, 1.0, lopts).value;
  };
  Candidate c;
  if (frobenius_norm(p) == 0.0) return c;
  double lo = 0.0;
  double hi = 1.0;
  double g_hi = g(hi);
  int expansions = 0;
  while (g_hi > delta && expansions < 60) {
    lo = hi;
    hi *= 2.0;
    g_hi = g(hi);
    ++expansions;
  }
  if (g_hi > delta) return c;
  // Invariant: g(lo) > delta >= g(hi).
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double gm = g(mid);
    if (gm > delta) {
      lo = mid;
    } else {
      hi = mid;
      g_hi = gm;
    }
    if (delta - g_hi <= 1e-3 * tol) break;
  }
  c.delta = p;
  c.delta *= hi;
  c.achieved = g_hi;
  c.feasible = std::abs(g_hi - delta) <= tol;
  return c;
}

}  // namespace

LogNormMaxResult delta_star(const Matrix& a, const OmegaBox& box, const LogNormMaxOptions& opts) {
  check_dims(a, box, "delta_star");
  return max_over_vertices(a, box, 1.0, opts);
}

double delta_prime(const Matrix& abar, const OmegaBox& box, const LogNormMaxOptions& opts) {
  check_dims(abar, box, "delta_prime");
  return -max_over_vertices(abar, box, -1.0, opts).value;
}

StabilizationResult stabilize(const Matrix& a, const OmegaBox& box, double delta_target,
                              const StabilizeOptions& opts) {
  check_dims(a, box, "stabilize");
  const auto star = max_over_vertices(a, box, 1.0, opts.lognorm);
  if (!(delta_target < star.value)) {
    throw PreconditionError("stabilize: target delta " + format_double(delta_target) +
                            " must be below delta_star " + format_double(star.value));
  }
  const std::size_t n = box.dim;
  const double scale = std::max(1.0, frobenius_norm(a));

  StabilizationResult res;
  res.delta_target = delta_target;
  res.delta_star = star.value;
  res.method = star.method;
  if (star.value > 0.0 && delta_target > 0.0) {
    res.baseline_norm = std::abs(delta_target / star.value - 1.0) * frobenius_norm(a);
  }

  // Dual projection with a growing working set of vertices.
  std::vector<Vector> diags{star.argmax.diagonal(box.alpha)};
  std::set<std::uint64_t> in_set{star.argmax.index()};
  std::vector<Matrix> ys{Matrix(n, n)};
  Matrix m = a;
  int used = 0;
  while (used < opts.max_iterations) {
    auto sol = solve_dual(a, delta_target, diags, ys, opts.max_iterations - used, scale);
    used += sol.iterations;
    m = std::move(sol.M);
    const auto worst = max_over_vertices(m, box, 1.0, opts.lognorm);
    if (worst.value <= delta_target + 1e-10 * scale || in_set.count(worst.argmax.index())) break;
    in_set.insert(worst.argmax.index());
    diags.push_back(worst.argmax.diagonal(box.alpha));
    ys.emplace_back(n, n);
  }
  res.iterations = used;

  std::vector<Candidate> candidates;
  candidates.push_back(hit_target(a, m - a, box, delta_target, opts.constraint_tol, opts.lognorm));
  candidates.back().source = "projection";
  if (std::isfinite(res.baseline_norm)) {
    Candidate c;
    c.delta = a;
    c.delta *= (delta_target / star.value - 1.0);
    c.achieved = max_over_vertices(a + c.delta, box, 1.0, opts.lognorm).value;
    c.feasible = std::abs(c.achieved - delta_target) <= opts.constraint_tol;
    c.source = "scaling";
    candidates.push_back(std::move(c));
  }
  // Shifting by -I lowers every mu2(D A) by at least alpha per unit, so this
  // direction always reaches the target.
  {
    Matrix shift = Matrix::identity(n);
    shift *= -1.0;
    candidates.push_back(hit_target(a, shift, box, delta_target, opts.constraint_tol, opts.lognorm));
    candidates.back().source = "shift";
  }

  const Candidate* best = nullptr;
  for (const auto& c : candidates) {
    if (!c.feasible) continue;
    if (!best || frobenius_norm(c.delta) < frobenius_norm(best->delta)) best = &c;
  }
  if (!best) {
    throw ConvergenceError("stabilize: no perturbation met delta " + format_double(delta_target) + " within " +
                           format_double(opts.constraint_tol) + " after " + std::to_string(used) +
                           " dual iterations");
  }
  res.Delta = best->delta;
  res.delta_achieved = best->achieved;
  res.frob_norm = frobenius_norm(res.Delta);
  res.source = best->source;
  return res;
}

}  // namespace nodeflow
