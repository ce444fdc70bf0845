#include "nodeflow/nets.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include "nodeflow/errors.hpp"
#include "nodeflow/spectral.hpp"

namespace nodeflow {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::string shape(std::size_t r, std::size_t c) { return std::to_string(r) + "x" + std::to_string(c); }

void check_affine(const Affine& l, const char* name) {
  if (l.W.rows() != l.c.size()) {
    throw DimensionError(std::string(name) + ": weight " + shape(l.W.rows(), l.W.cols()) + " vs bias of length " +
                         std::to_string(l.c.size()));
  }
}

// out += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> out) {
  for (std::size_t i = 0; i < x.size(); ++i) out[i] += alpha * x[i];
}

Matrix uniform_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = dist(rng);
  return m;
}

Affine make_affine(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return Affine{uniform_matrix(out, in, rng), Vector(out, 0.0)};
}

void check_input(std::size_t expected, std::size_t got) {
  if (expected != got) {
    throw DimensionError("forward: input has length " + std::to_string(got) + ", expected " +
                         std::to_string(expected));
  }
}

Vector sigma_forward(const std::vector<const Affine*>& layers, const ActivationSpec& act,
                     std::span<const double> x, ForwardCache* cache) {
  check_input(layers.front()->in_dim(), x.size());
  if (cache) {
    cache->valid = true;
    cache->input.assign(x.begin(), x.end());
    cache->states.clear();
    cache->pre.clear();
  }
  Vector h(x.begin(), x.end());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (cache) cache->states.push_back(h);
    Vector z = (*layers[l])(h);
    if (l + 1 == layers.size()) return z;
    if (cache) cache->pre.push_back(z);
    for (double& v : z) v = act(v);
    h = std::move(z);
  }
  return h;
}

// Gradients for a chain of affine layers separated by the activation.
void sigma_backward(const std::vector<const Affine*>& layers, const ActivationSpec& act, const ForwardCache& cache,
                    std::span<const double> upstream, Gradients& grads) {
  Vector g(upstream.begin(), upstream.end());
  for (std::size_t l = layers.size(); l-- > 0;) {
    const Affine& layer = *layers[l];
    const Vector& in = cache.states[l];
    Vector& dW = grads.tensors[2 * l];
    Vector& dc = grads.tensors[2 * l + 1];
    for (std::size_t i = 0; i < layer.out_dim(); ++i) {
      axpy(g[i], in, std::span<double>(dW.data() + i * layer.in_dim(), layer.in_dim()));
      dc[i] += g[i];
    }
    Vector gin = transpose_times(layer.W, g);
    if (l > 0) {
      const Vector& z = cache.pre[l - 1];
      for (std::size_t i = 0; i < gin.size(); ++i) gin[i] *= act.derivative(z[i]);
    }
    g = std::move(gin);
  }
  if (grads.input.size() != g.size()) grads.input.assign(g.size(), 0.0);
  axpy(1.0, g, grads.input);
}

}  // namespace

Vector Affine::operator()(std::span<const double> x) const {
  Vector y = W * x;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += c[i];
  return y;
}

void ShallowFlowNet::validate() const {
  const std::size_t d = A1.rows();
  if (b1.size() != d || ode.dim() != d || ode.A.rows() != d || A2.cols() != d || A2.rows() != b2.size()) {
    throw DimensionError("ShallowFlowNet: inconsistent dimensions (A1 " + shape(A1.rows(), A1.cols()) + ", b1 " +
                         std::to_string(b1.size()) + ", A " + shape(ode.A.rows(), ode.A.cols()) + ", A2 " +
                         shape(A2.rows(), A2.cols()) + ", b2 " + std::to_string(b2.size()) + ")");
  }
}

void ShallowSigmaNet::validate() const {
  check_affine(l1, "ShallowSigmaNet.l1");
  check_affine(l2, "ShallowSigmaNet.l2");
  if (l2.in_dim() != l1.out_dim()) throw DimensionError("ShallowSigmaNet: layers do not chain");
}

void TwoHiddenNet::validate() const {
  check_affine(l1, "TwoHiddenNet.l1");
  check_affine(l2, "TwoHiddenNet.l2");
  check_affine(l3, "TwoHiddenNet.l3");
  if (l2.in_dim() != l1.out_dim() || l3.in_dim() != l2.out_dim()) {
    throw DimensionError("TwoHiddenNet: layers do not chain");
  }
}

const char* to_string(Arch a) {
  switch (a) {
    case Arch::flow:
      return "flow";
    case Arch::shallow:
      return "shallow";
    case Arch::two_hidden:
      return "two-hidden";
  }
  return "?";
}

Arch parse_arch(const std::string& s) {
  if (s == "flow") return Arch::flow;
  if (s == "shallow") return Arch::shallow;
  if (s == "two-hidden") return Arch::two_hidden;
  throw ParseError("unknown architecture \"" + s + "\"");
}

Arch arch_of(const Model& m) { return static_cast<Arch>(m.index()); }

std::size_t input_dim(const Model& m) {
  return std::visit(overloaded{[](const ShallowFlowNet& n) { return n.in_dim(); },
                               [](const ShallowSigmaNet& n) { return n.l1.in_dim(); },
                               [](const TwoHiddenNet& n) { return n.l1.in_dim(); }},
                    m);
}

std::size_t output_dim(const Model& m) {
  return std::visit(overloaded{[](const ShallowFlowNet& n) { return n.out_dim(); },
                               [](const ShallowSigmaNet& n) { return n.l2.out_dim(); },
                               [](const TwoHiddenNet& n) { return n.l3.out_dim(); }},
                    m);
}

ShallowFlowNet make_flow_net(std::size_t m, std::size_t d, std::size_t n, const ActivationSpec& act,
                             int euler_steps, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ShallowFlowNet net;
  net.A1 = uniform_matrix(d, m, rng);
  net.b1.assign(d, 0.0);
  Matrix a = uniform_matrix(d, d, rng);
  net.ode = NeuralOde(std::move(a), Vector(d, 0.0), act, euler_steps);
  net.A2 = uniform_matrix(n, d, rng);
  net.b2.assign(n, 0.0);
  return net;
}

ShallowSigmaNet make_shallow_net(std::size_t m, std::size_t d, std::size_t n, const ActivationSpec& act,
                                 std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ShallowSigmaNet net;
  net.l1 = make_affine(m, d, rng);
  net.l2 = make_affine(d, n, rng);
  net.activation = act;
  return net;
}

TwoHiddenNet make_two_hidden_net(std::size_t m, std::size_t d, std::size_t n, const ActivationSpec& act,
                                 std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TwoHiddenNet net;
  net.l1 = make_affine(m, d, rng);
  net.l2 = make_affine(d, d, rng);
  net.l3 = make_affine(d, n, rng);
  net.activation = act;
  return net;
}

Model make_model(Arch arch, std::size_t m, std::size_t d, std::size_t n, const ActivationSpec& act,
                 int euler_steps, std::uint64_t seed) {
  switch (arch) {
    case Arch::flow:
      return make_flow_net(m, d, n, act, euler_steps, seed);
    case Arch::shallow:
      return make_shallow_net(m, d, n, act, seed);
    case Arch::two_hidden:
      return matched_two_hidden(m, d, n, act, seed);
  }
  throw ContractError("make_model: unknown architecture");
}

std::size_t flow_param_count(std::size_t m, std::size_t d, std::size_t n) {
  return d * m + d + d * d + d + n * d + n;
}

TwoHiddenNet matched_two_hidden(std::size_t m, std::size_t d, std::size_t n, const ActivationSpec& act,
                                std::uint64_t seed) {
  TwoHiddenNet net = make_two_hidden_net(m, d, n, act, seed);
  if (param_count(Model{net}) != flow_param_count(m, d, n)) {
    throw ContractError("matched_two_hidden: parameter counts differ");
  }
  return net;
}

std::size_t param_count(const Model& m) {
  std::size_t total = 0;
  for (auto s : parameters(const_cast<Model&>(m))) total += s.size();
  return total;
}

std::vector<std::span<double>> parameters(Model& m) {
  return std::visit(
      overloaded{[](ShallowFlowNet& n) -> std::vector<std::span<double>> {
                   return {n.A1.data(), n.b1, n.ode.A.data(), n.ode.b, n.A2.data(), n.b2};
                 },
                 [](ShallowSigmaNet& n) -> std::vector<std::span<double>> {
                   return {n.l1.W.data(), n.l1.c, n.l2.W.data(), n.l2.c};
                 },
                 [](TwoHiddenNet& n) -> std::vector<std::span<double>> {
                   return {n.l1.W.data(), n.l1.c, n.l2.W.data(), n.l2.c, n.l3.W.data(), n.l3.c};
                 }},
      m);
}

std::vector<std::string> parameter_names(const Model& m) {
  switch (arch_of(m)) {
    case Arch::flow:
      return {"A1", "b1", "A", "b", "A2", "b2"};
    case Arch::shallow:
      return {"A1", "b1", "A2", "b2"};
    case Arch::two_hidden:
      return {"A1", "b1", "A2", "b2", "A3", "b3"};
  }
  return {};
}

Gradients Gradients::zeros_like(const Model& m) {
  Gradients g;
  for (auto s : parameters(const_cast<Model&>(m))) g.tensors.emplace_back(s.size(), 0.0);
  g.input.assign(input_dim(m), 0.0);
  return g;
}

void Gradients::set_zero() {
  for (auto& t : tensors) std::fill(t.begin(), t.end(), 0.0);
  std::fill(input.begin(), input.end(), 0.0);
}

Vector forward(const ShallowFlowNet& net, std::span<const double> x, ForwardCache* cache) {
  check_input(net.in_dim(), x.size());
  const NeuralOde& ode = net.ode;
  const std::size_t d = net.hidden_dim();
  const int steps = ode.euler_steps;
  const double h = 1.0 / steps;

  Vector u = net.A1 * x;
  for (std::size_t i = 0; i < d; ++i) u[i] += net.b1[i];
  if (cache) {
    cache->valid = true;
    cache->input.assign(x.begin(), x.end());
    cache->states.resize(steps + 1);
    cache->pre.resize(steps);
    cache->states[0] = u;
  }
  Vector p(d);
  for (int k = 0; k < steps; ++k) {
    // Same arithmetic as NeuralOde::field so forward() and flow() agree bitwise.
    for (std::size_t i = 0; i < d; ++i) p[i] = dot(ode.A.row(i), u) + ode.b[i];
    for (std::size_t i = 0; i < d; ++i) u[i] += h * ode.activation(p[i]);
    if (!all_finite(u)) throw OverflowError("flow: non-finite state at step " + std::to_string(k + 1));
    if (cache) {
      cache->pre[k] = p;
      cache->states[k + 1] = u;
    }
  }
  Vector y = net.A2 * u;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += net.b2[i];
  return y;
}

Vector forward(const Model& m, std::span<const double> x, ForwardCache* cache) {
  return std::visit(overloaded{[&](const ShallowFlowNet& n) { return forward(n, x, cache); },
                               [&](const ShallowSigmaNet& n) {
                                 return sigma_forward({&n.l1, &n.l2}, n.activation, x, cache);
                               },
                               [&](const TwoHiddenNet& n) {
                                 return sigma_forward({&n.l1, &n.l2, &n.l3}, n.activation, x, cache);
                               }},
                    m);
}

void backward(const Model& m, const ForwardCache& cache, std::span<const double> upstream, Gradients& grads) {
  if (!cache.valid) throw ContractError("backward: no forward pass recorded");
  if (upstream.size() != output_dim(m)) throw DimensionError("backward: upstream has the wrong length");
  if (grads.tensors.empty()) grads = Gradients::zeros_like(m);

  if (const auto* net = std::get_if<ShallowFlowNet>(&m)) {
    const std::size_t d = net->hidden_dim();
    const std::size_t in = net->in_dim();
    const int steps = net->ode.euler_steps;
    const double h = 1.0 / steps;
    if (cache.states.size() != static_cast<std::size_t>(steps + 1)) {
      throw ContractError("backward: cache does not match this network");
    }
    auto& dA1 = grads.tensors[0];
    auto& db1 = grads.tensors[1];
    auto& dA = grads.tensors[2];
    auto& db = grads.tensors[3];
    auto& dA2 = grads.tensors[4];
    auto& db2 = grads.tensors[5];

    const Vector& uN = cache.states.back();
    for (std::size_t i = 0; i < upstream.size(); ++i) {
      axpy(upstream[i], uN, std::span<double>(dA2.data() + i * d, d));
      db2[i] += upstream[i];
    }
    Vector g = transpose_times(net->A2, upstream);
    Vector s(d);
    for (int k = steps; k-- > 0;) {
      const Vector& p = cache.pre[k];
      const Vector& u = cache.states[k];
      for (std::size_t i = 0; i < d; ++i) s[i] = h * net->ode.activation.derivative(p[i]) * g[i];
      for (std::size_t i = 0; i < d; ++i) {
        if (s[i] == 0.0) continue;
        axpy(s[i], u, std::span<double>(dA.data() + i * d, d));
        db[i] += s[i];
        axpy(s[i], net->ode.A.row(i), g);
      }
    }
    for (std::size_t i = 0; i < d; ++i) {
      axpy(g[i], cache.input, std::span<double>(dA1.data() + i * in, in));
      db1[i] += g[i];
    }
    if (grads.input.size() != in) grads.input.assign(in, 0.0);
    axpy(1.0, transpose_times(net->A1, g), grads.input);
    return;
  }
  if (const auto* net = std::get_if<ShallowSigmaNet>(&m)) {
    sigma_backward({&net->l1, &net->l2}, net->activation, cache, upstream, grads);
    return;
  }
  const auto& net = std::get<TwoHiddenNet>(m);
  sigma_backward({&net.l1, &net.l2, &net.l3}, net.activation, cache, upstream, grads);
}

Gradients backward(const Model& m, const ForwardCache& cache, std::span<const double> upstream) {
  Gradients g = Gradients::zeros_like(m);
  backward(m, cache, upstream, g);
  return g;
}

void project_norms(ShallowFlowNet& net, const NormConstraint& constraint) {
  const double s1 = spectral_norm(net.A1);
  const double s2 = spectral_norm(net.A2);
  if (s1 == 0.0) throw ContractError("project_norms: cannot normalize a zero A1");
  if (s2 == 0.0) throw ContractError("project_norms: cannot normalize a zero A2");
  net.A1 *= constraint.c1 / s1;
  net.A2 *= constraint.c2 / s2;
}

Vector RenormalizedNet::forward(std::span<const double> x) const {
  Vector z = net.A1 * x;
  for (std::size_t i = 0; i < z.size(); ++i) z[i] += net.b1[i];
  Vector u = piecewise_flow(net.ode, t0, T, z);
  Vector y = net.A2 * u;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += net.b2[i];
  return y;
}

RenormalizedNet renormalize_to_fixed_norm(const ShallowFlowNet& net, double c) {
  net.validate();
  if (!(c >= 1.0)) throw ContractError("renormalize_to_fixed_norm: c must be >= 1");
  const double s1 = spectral_norm(net.A1);
  const double s2 = spectral_norm(net.A2);
  // Relative slack absorbs rounding when a norm already equals its target.
  constexpr double slack = 1e-12;
  if (s1 == 0.0 || s1 < c * (1.0 - slack)) {
    throw ContractError("renormalize_to_fixed_norm: ||A1||_2 = " + format_double(s1) + " is below c = " +
                        format_double(c));
  }
  if (s2 == 0.0 || s2 < 1.0 - slack) {
    throw ContractError("renormalize_to_fixed_norm: ||A2||_2 = " + format_double(s2) + " is below 1");
  }
  RenormalizedNet r;
  r.net = net;
  r.net.A1 *= c / s1;
  for (double& v : r.net.b1) v *= c / s1;
  r.net.A2 *= 1.0 / s2;
  r.t0 = std::min(0.0, -std::log(s1 / c));
  r.T = std::max(1.0, std::log(s2) + 1.0);
  return r;
}

ShallowFlowNet stabilized(const ShallowFlowNet& net, const Matrix& delta) {
  if (delta.rows() != net.ode.A.rows() || delta.cols() != net.ode.A.cols()) {
    throw DimensionError("stabilized: Delta is " + shape(delta.rows(), delta.cols()) + " but A is " +
                         shape(net.ode.A.rows(), net.ode.A.cols()));
  }
  ShallowFlowNet out = net;
  out.ode.A += delta;
  return out;
}

ShallowFlowNet stabilized(const ShallowFlowNet& net, const StabilizationResult& result) {
  return stabilized(net, result.Delta);
}

// ---------------------------------------------------------------------------
// Serialization.

namespace {

constexpr const char* kMagic = "flownet-v1";

void write_tensor(std::ostream& os, const std::string& name, const Matrix& m) {
  os << name << '\n';
  write_matrix(os, m);
}

void write_tensor(std::ostream& os, const std::string& name, const Vector& v) {
  write_tensor(os, name, Matrix(v.size(), 1, v));
}

Matrix read_tensor(std::istream& is, const std::string& name, std::size_t rows, std::size_t cols) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError("model: missing tensor " + name);
  if (line != name) throw ParseError("model: expected tensor \"" + name + "\", found \"" + line + "\"");
  Matrix m = read_matrix(is);
  if (m.rows() != rows || m.cols() != cols) {
    throw ParseError("model: tensor " + name + " is " + shape(m.rows(), m.cols()) + ", expected " +
                     shape(rows, cols));
  }
  return m;
}

Vector read_vector(std::istream& is, const std::string& name, std::size_t n) {
  return read_tensor(is, name, n, 1).data();
}

Affine read_affine(std::istream& is, const std::string& w, const std::string& c, std::size_t out, std::size_t in) {
  Affine a;
  a.W = read_tensor(is, w, out, in);
  a.c = read_vector(is, c, out);
  return a;
}

}  // namespace

void write_model(std::ostream& os, const Model& m) {
  std::visit(overloaded{[&](const ShallowFlowNet& n) {
                          n.validate();
                          os << kMagic << " flow " << n.in_dim() << ' ' << n.hidden_dim() << ' ' << n.out_dim()
                             << ' ' << n.ode.euler_steps << ' ' << format_double(n.ode.activation.alpha()) << ' '
                             << to_string(n.ode.activation.kind()) << '\n';
                          write_tensor(os, "A1", n.A1);
                          write_tensor(os, "b1", n.b1);
                          write_tensor(os, "A", n.ode.A);
                          write_tensor(os, "b", n.ode.b);
                          write_tensor(os, "A2", n.A2);
                          write_tensor(os, "b2", n.b2);
                        },
                        [&](const ShallowSigmaNet& n) {
                          n.validate();
                          os << kMagic << " shallow " << n.l1.in_dim() << ' ' << n.l1.out_dim() << ' '
                             << n.l2.out_dim() << " 0 " << format_double(n.activation.alpha()) << ' '
                             << to_string(n.activation.kind()) << '\n';
                          write_tensor(os, "A1", n.l1.W);
                          write_tensor(os, "b1", n.l1.c);
                          write_tensor(os, "A2", n.l2.W);
                          write_tensor(os, "b2", n.l2.c);
                        },
                        [&](const TwoHiddenNet& n) {
                          n.validate();
                          os << kMagic << " two-hidden " << n.l1.in_dim() << ' ' << n.l1.out_dim() << ' '
                             << n.l3.out_dim() << " 0 " << format_double(n.activation.alpha()) << ' '
                             << to_string(n.activation.kind()) << '\n';
                          write_tensor(os, "A1", n.l1.W);
                          write_tensor(os, "b1", n.l1.c);
                          write_tensor(os, "A2", n.l2.W);
                          write_tensor(os, "b2", n.l2.c);
                          write_tensor(os, "A3", n.l3.W);
                          write_tensor(os, "b3", n.l3.c);
                        }},
             m);
}

Model read_model(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ParseError("model: empty file");
  std::istringstream header(line);
  std::string magic, arch_name, kind_name;
  long long m = -1, d = -1, n = -1, steps = -1;
  double alpha = 0.0;
  if (!(header >> magic >> arch_name >> m >> d >> n >> steps >> alpha >> kind_name) || m < 1 || d < 1 || n < 1 ||
      steps < 0) {
    throw ParseError("model: malformed header \"" + line + "\"");
  }
  if (magic != kMagic) throw ParseError("model: unsupported format \"" + magic + "\"");
  const Arch arch = parse_arch(arch_name);
  const ActivationKind kind = parse_activation_kind(kind_name);
  const ActivationSpec act =
      kind == ActivationKind::leaky_relu ? ActivationSpec::leaky_relu(alpha) : ActivationSpec::smoothed(alpha);
  const auto M = static_cast<std::size_t>(m);
  const auto D = static_cast<std::size_t>(d);
  const auto Nout = static_cast<std::size_t>(n);

  switch (arch) {
    case Arch::flow: {
      if (steps < 1) throw ParseError("model: flow net needs at least one Euler step");
      ShallowFlowNet net;
      net.A1 = read_tensor(is, "A1", D, M);
      net.b1 = read_vector(is, "b1", D);
      Matrix a = read_tensor(is, "A", D, D);
      Vector b = read_vector(is, "b", D);
      net.ode = NeuralOde(std::move(a), std::move(b), act, static_cast<int>(steps));
      net.A2 = read_tensor(is, "A2", Nout, D);
      net.b2 = read_vector(is, "b2", Nout);
      return net;
    }
    case Arch::shallow: {
      ShallowSigmaNet net;
      net.l1 = read_affine(is, "A1", "b1", D, M);
      net.l2 = read_affine(is, "A2", "b2", Nout, D);
      net.activation = act;
      return net;
    }
    case Arch::two_hidden: {
      TwoHiddenNet net;
      net.l1 = read_affine(is, "A1", "b1", D, M);
      net.l2 = read_affine(is, "A2", "b2", D, D);
      net.l3 = read_affine(is, "A3", "b3", Nout, D);
      net.activation = act;
      return net;
    }
  }
  throw ParseError("model: unknown architecture");
}

void save_model(const std::string& path, const Model& m) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write model file " + path);
  write_model(out, m);
}

Model load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open model file " + path);
  return read_model(in);
}

}  // namespace nodeflow
