// Serial reference vs OpenMP structure-factor kernels.
//   bench_kernels --benchmark_filter=omp
// Arguments: atoms, then d_min in tenths of an angstrom.

#include <benchmark/benchmark.h>

#include <random>

#include "xtalforge/kernels.hpp"
#include "xtalforge/synth.hpp"

using namespace xtalforge;

namespace {

SfProblem problem(int n_atoms, double d_min) {
  UnitCell cell(40, 45, 50, 90, 90, 90);
  SpaceGroup sg = find_space_group("P 21 21 21");
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  AtomicModel m;
  for (int i = 0; i != n_atoms; ++i) {
    Atom a;
    a.element = std::string(1, "CNOS"[i % 4]);
    a.xyz = cell.orthogonalize(Vec3(u(rng), u(rng), u(rng)));
    a.b_iso = 10 + 30 * u(rng);
    m.atoms.push_back(a);
  }
  return make_sf_problem(m, cell, sg, unique_reflections(cell, sg, d_min),
                         ScatteringTable::bundled());
}

template <auto Kernel>
void f_protein(benchmark::State& state) {
  SfProblem p = problem(int(state.range(0)), state.range(1) / 10.0);
  for (auto _ : state)
    benchmark::DoNotOptimize(Kernel(p));
  state.counters["reflections"] = double(p.hkl.size());
  state.SetItemsProcessed(state.iterations() * std::int64_t(p.hkl.size()) * state.range(0) *
                          std::int64_t(p.ops.size()));
}

template <auto Kernel>
void sf_gradient(benchmark::State& state) {
  SfProblem p = problem(int(state.range(0)), state.range(1) / 10.0);
  std::vector<cplx> w(p.hkl.size());
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 1);
  for (auto& x : w)
    x = {n(rng), n(rng)};
  for (auto _ : state)
    benchmark::DoNotOptimize(Kernel(p, w));
  state.SetItemsProcessed(state.iterations() * std::int64_t(p.hkl.size()) * state.range(0) *
                          std::int64_t(p.ops.size()));
}

void sizes(benchmark::internal::Benchmark* b) {
  b->Args({200, 30})->Args({1000, 25})->Unit(benchmark::kMillisecond)->UseRealTime();
}

} // namespace

BENCHMARK(f_protein<f_protein_serial>)->Name("f_protein/serial")->Apply(sizes);
BENCHMARK(f_protein<f_protein_omp>)->Name("f_protein/omp")->Apply(sizes);
BENCHMARK(sf_gradient<sf_gradient_serial>)->Name("sf_gradient/serial")->Apply(sizes);
BENCHMARK(sf_gradient<sf_gradient_omp>)->Name("sf_gradient/omp")->Apply(sizes);

BENCHMARK_MAIN();
