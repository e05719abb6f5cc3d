#include "vpb/collision.hpp"
#include "vpb/solver.hpp"

#include <benchmark/benchmark.h>

using namespace vpb;

namespace {

PairValues perturbation(const VelocityGrid& g) {
  PairValues p(g.size());
  for (std::size_t k = 0; k < g.size(); ++k) {
    const Vec3& v = g.node(k);
    p.plus[k] = 0.1 * (1.0 + v[0]) * sqrt_mu_of(v);
    p.minus[k] = -0.1 * (1.0 - v[1] * v[2]) * sqrt_mu_of(v);
  }
  return p;
}

void BM_KernelTables(benchmark::State& state) {
  const VelocityGrid g(5.0, static_cast<int>(state.range(0)));
  for (auto _ : state) {
    KernelTables t(g);
    benchmark::DoNotOptimize(t.k1_face_correction().data());
  }
}
BENCHMARK(BM_KernelTables)->Arg(8)->Arg(10)->Arg(14)->Unit(benchmark::kMillisecond);

void BM_ApplyK(benchmark::State& state) {
  const VelocityGrid g(5.0, static_cast<int>(state.range(0)));
  const KernelTables t(g);
  const PairValues p = perturbation(g);
  for (auto _ : state) benchmark::DoNotOptimize(t.apply_K(p).plus.data());
}
BENCHMARK(BM_ApplyK)->Arg(8)->Arg(10)->Arg(14)->Unit(benchmark::kMicrosecond);

void BM_GammaGain(benchmark::State& state) {
  const VelocityGrid g(5.0, static_cast<int>(state.range(0)));
  const GammaOperator op(g, SphereQuadrature(4, 8));
  const PairValues p = perturbation(g);
  for (auto _ : state) benchmark::DoNotOptimize(op.gain(p, p).plus.data());
}
BENCHMARK(BM_GammaGain)->Arg(8)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_PicardSweep(benchmark::State& state) {
  SolverConfig c;
  c.n_v = 6;
  c.v_max = 4.0;
  c.nonlinear = state.range(0) != 0;
  const Solver s(c);
  const IterationState init = s.initialize();
  for (auto _ : state) {
    IterationState st = init;
    s.picard_sweep(st);
    benchmark::DoNotOptimize(st.increments.back());
  }
}
BENCHMARK(BM_PicardSweep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
