#include <benchmark/benchmark.h>

#include <random>

#include "nodeflow/bounds.hpp"
#include "nodeflow/nets.hpp"
#include "nodeflow/spectral.hpp"
#include "nodeflow/training.hpp"

namespace nf = nodeflow;

namespace {

nf::Matrix gaussian(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  nf::Matrix m(r, c);
  for (double& v : m.data()) v = g(rng);
  return m;
}

void BM_Mu2(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const nf::Matrix a = gaussian(n, n, 1);
  for (auto _ : state) benchmark::DoNotOptimize(nf::mu2(a));
}
BENCHMARK(BM_Mu2)->Arg(4)->Arg(16)->Arg(64);

void BM_DeltaStar(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const nf::Matrix a = gaussian(d, d, 2);
  const nf::OmegaBox box(d, 0.1);
  for (auto _ : state) benchmark::DoNotOptimize(nf::delta_star(a, box).value);
}
BENCHMARK(BM_DeltaStar)->Arg(2)->Arg(4)->Arg(8)->Arg(12);

void BM_Stabilize(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const nf::Matrix a = gaussian(d, d, 3);
  const nf::OmegaBox box(d, 0.1);
  const double target = nf::delta_star(a, box).value - 0.05;
  for (auto _ : state) benchmark::DoNotOptimize(nf::stabilize(a, box, target).frob_norm);
}
BENCHMARK(BM_Stabilize)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_Flow(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const int steps = static_cast<int>(state.range(1));
  const nf::NeuralOde ode(gaussian(d, d, 4), nf::Vector(d, 0.1), nf::ActivationSpec::leaky_relu(0.1), steps);
  const nf::Vector u0(d, 0.5);
  for (auto _ : state) benchmark::DoNotOptimize(nf::flow(ode, u0));
}
BENCHMARK(BM_Flow)->Args({2, 20})->Args({100, 20})->Args({2, 1000});

void BM_ForwardBackward(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const nf::Model m = nf::make_flow_net(1, d, 1, nf::ActivationSpec::leaky_relu(0.1), 20, 5);
  nf::Gradients g = nf::Gradients::zeros_like(m);
  nf::ForwardCache cache;
  const nf::Vector x{0.3}, up{1.0};
  for (auto _ : state) {
    nf::forward(m, x, &cache);
    nf::backward(m, cache, up, g);
  }
}
BENCHMARK(BM_ForwardBackward)->Arg(5)->Arg(50)->Arg(100);

void BM_RegionMap(benchmark::State& state) {
  nf::ShallowFlowNet net;
  net.A1 = nf::Matrix::identity(2);
  net.b1 = {0.0, 0.0};
  net.ode = nf::NeuralOde(gaussian(2, 2, 6), nf::Vector{0.2, -0.1}, nf::ActivationSpec::leaky_relu(0.1));
  net.A2 = nf::Matrix::identity(2);
  net.b2 = {0.0, 0.0};
  const nf::OmegaBox box(2, 0.1);
  const auto st = nf::stabilize(net.ode.A, box, nf::delta_star(net.ode.A, box).value - 0.05);
  const auto bar = nf::stabilized(net, st);
  const auto grid = nf::CompactGrid::box({-1, -1}, {1, 1}, 0.05);
  for (auto _ : state) benchmark::DoNotOptimize(nf::region_map(net, bar, st.Delta, grid, box).fraction_green());
}
BENCHMARK(BM_RegionMap)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
