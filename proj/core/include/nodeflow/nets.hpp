#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "nodeflow/flow.hpp"
#include "nodeflow/linalg.hpp"

namespace nodeflow {

struct StabilizationResult;

// x -> W x + c
struct Affine {
  Matrix W;
  Vector c;

  std::size_t in_dim() const noexcept { return W.cols(); }
  std::size_t out_dim() const noexcept { return W.rows(); }
  Vector operator()(std::span<const double> x) const;
};

// x -> A2 phi(A1 x + b1) + b2, phi the time-1 flow of the neural ODE.
struct ShallowFlowNet {
  Matrix A1;
  Vector b1;
  NeuralOde ode;
  Matrix A2;
  Vector b2;

  std::size_t in_dim() const noexcept { return A1.cols(); }
  std::size_t hidden_dim() const noexcept { return A1.rows(); }
  std::size_t out_dim() const noexcept { return A2.rows(); }
  void validate() const;
};

// x -> l2(sigma(l1(x)))
struct ShallowSigmaNet {
  Affine l1;
  Affine l2;
  ActivationSpec activation;

  void validate() const;
};

// x -> l3(sigma(l2(sigma(l1(x)))))
struct TwoHiddenNet {
  Affine l1;
  Affine l2;
  Affine l3;
  ActivationSpec activation;

  void validate() const;
};

using Model = std::variant<ShallowFlowNet, ShallowSigmaNet, TwoHiddenNet>;

enum class Arch { flow, shallow, two_hidden };
const char* to_string(Arch a);
Arch parse_arch(const std::string& s);
Arch arch_of(const Model& m);

std::size_t input_dim(const Model& m);
std::size_t output_dim(const Model& m);

// Weights i.i.d. uniform on (-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
ShallowFlowNet make_flow_net(std::size_t m, std::size_t d, std::size_t n, const ActivationSpec& act,
                             int euler_steps, std::uint64_t seed);
ShallowSigmaNet make_shallow_net(std::size_t m, std::size_t d, std::size_t n, const ActivationSpec& act,
                                 std::uint64_t seed);
TwoHiddenNet make_two_hidden_net(std::size_t m, std::size_t d, std::size_t n, const ActivationSpec& act,
                                 std::uint64_t seed);
Model make_model(Arch arch, std::size_t m, std::size_t d, std::size_t n, const ActivationSpec& act,
                 int euler_steps, std::uint64_t seed);

// Two-hidden-layer net with as many parameters as the flow net of the same
// (m, d, n). The counts agree identically: (md + d) + (d^2 + d) + (dn + n).
TwoHiddenNet matched_two_hidden(std::size_t m, std::size_t d, std::size_t n, const ActivationSpec& act = {},
                                std::uint64_t seed = 0);

std::size_t param_count(const Model& m);
std::size_t flow_param_count(std::size_t m, std::size_t d, std::size_t n);

// Mutable views of every parameter tensor in canonical order:
// flow (A1, b1, A, b, A2, b2); shallow (A1, b1, A2, b2);
// two-hidden (A1, b1, A2, b2, A3, b3).
std::vector<std::span<double>> parameters(Model& m);
std::vector<std::string> parameter_names(const Model& m);

// Per-call state recorded by forward() and consumed by backward().
struct ForwardCache {
  bool valid = false;
  Vector input;
  std::vector<Vector> states;  // flow: u_0 .. u_N;  sigma nets: layer inputs
  std::vector<Vector> pre;     // pre-activations, one per activation application
};

struct Gradients {
  std::vector<Vector> tensors;  // same order and sizes as parameters()
  Vector input;                 // d output / d x contracted with upstream

  static Gradients zeros_like(const Model& m);
  void set_zero();
};

Vector forward(const Model& m, std::span<const double> x, ForwardCache* cache = nullptr);
Vector forward(const ShallowFlowNet& net, std::span<const double> x, ForwardCache* cache = nullptr);

// Reverse accumulation through the discretized forward map. Adds into `grads`.
void backward(const Model& m, const ForwardCache& cache, std::span<const double> upstream, Gradients& grads);
Gradients backward(const Model& m, const ForwardCache& cache, std::span<const double> upstream);

struct NormConstraint {
  double c1 = 1.0;  // target ||A1||_2, at least 1
  double c2 = 1.0;  // target ||A2||_2
};

// Rescales A1 and A2 of a flow net to the prescribed spectral norms.
void project_norms(ShallowFlowNet& net, const NormConstraint& constraint);

struct RenormalizedNet {
  ShallowFlowNet net;  // ||A1||_2 = c, ||A2||_2 = 1
  double t0 = 0.0;
  double T = 1.0;

  // A2 psi(A1 x + b1) + b2 with psi the piecewise flow on [t0, T].
  Vector forward(std::span<const double> x) const;
};

// Moves the norms of A1 and A2 into linear phases before and after the flow.
RenormalizedNet renormalize_to_fixed_norm(const ShallowFlowNet& net, double c);

// Copy of the net with A replaced by A + Delta.
ShallowFlowNet stabilized(const ShallowFlowNet& net, const StabilizationResult& result);
ShallowFlowNet stabilized(const ShallowFlowNet& net, const Matrix& delta);

// Model file: header "flownet-v1 <arch> m d n N alpha act_kind" followed by
// each tensor's name and its Matrix text block.
void write_model(std::ostream& os, const Model& m);
Model read_model(std::istream& is);
void save_model(const std::string& path, const Model& m);
Model load_model(const std::string& path);

}  // namespace nodeflow
