#include "stopbsde/apps.hpp"
#include "stopbsde/ergodicity.hpp"
#include "stopbsde/solver.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace stopbsde;

namespace {

/// Birth-death chain on n states absorbed at 0, rates 1 down and 0.5 up.
RateMatrix birth_death(std::size_t n) {
  const auto m = static_cast<Eigen::Index>(n);
  Matrix q = Matrix::Zero(m, m);
  for (Eigen::Index i = 1; i < m; ++i) {
    q(i - 1, i) = 1.0;
    if (i + 1 < m) q(i + 1, i) = 0.5;
    q(i, i) = -q.col(i).sum();
  }
  return validate_rate_matrix(q);
}

ControlSet two_speeds(const RateMatrix& a) {
  const auto n = static_cast<Eigen::Index>(a.size());
  Matrix running(2, n);
  running.row(0).setConstant(1.0);
  running.row(1).setConstant(1.5);
  return ControlSet::from_tables(a, {"slow", "fast"}, {a, a.scaled(2.0)}, running, std::nullopt,
                                 StateSet({0}));
}

void BM_HomogeneousAffine(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const RateMatrix a = birth_death(n);
  const auto m = static_cast<Eigen::Index>(n);
  Vector g = Vector::Ones(m);
  g[0] = 0.0;
  const HittingProblem p(a, StateSet({0}), constant_terminal(Vector::Zero(m)),
                         affine_driver({Matrix::Zero(m, m), g, Vector::Zero(m)}));
  for (auto _ : state) benchmark::DoNotOptimize(solve_homogeneous(p).u()[1]);
}
BENCHMARK(BM_HomogeneousAffine)->Arg(4)->Arg(16)->Arg(64);

void BM_ControlBellman(benchmark::State& state) {
  const RateMatrix a = birth_death(static_cast<std::size_t>(state.range(0)));
  const ControlSet cs = two_speeds(a);
  const Vector phi = Vector::Zero(static_cast<Eigen::Index>(a.size()));
  for (auto _ : state) benchmark::DoNotOptimize(solve_control(cs, StateSet({0}), phi).value.u()[1]);
}
BENCHMARK(BM_ControlBellman)->Arg(4)->Arg(16)->Arg(32);

void BM_BackwardGrid(benchmark::State& state) {
  const RateMatrix a = birth_death(16);
  Vector phi = Vector::Zero(16);
  phi[0] = 1.0;
  const HittingProblem p(a, StateSet({0}), constant_terminal(phi), zero_driver());
  const double horizon = static_cast<double>(state.range(0));
  const std::size_t steps = min_grid_steps(a, horizon);
  for (auto _ : state) benchmark::DoNotOptimize(solve_backward_grid(p, horizon, steps).values.back()[1]);
}
BENCHMARK(BM_BackwardGrid)->Arg(10)->Arg(100);

void BM_WorstCaseMoment(benchmark::State& state) {
  const RateMatrix a = birth_death(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(worst_case_exp_moment(a, 0.8, StateSet({0}), 0.01).values[1]);
  }
}
BENCHMARK(BM_WorstCaseMoment)->Arg(4)->Arg(8);

void BM_DiodeCircuit(benchmark::State& state) {
  const CircuitSpec c{{"vcc", "a", "b", "gnd"},
                      {{0, 1, Diode{1e-12, 0.026}}, {1, 2, Resistor{1000}}, {2, 3, Diode{1e-12, 0.026}},
                       {1, 3, Resistor{10000}}},
                      {{0, 2.0}, {3, 0.0}}};
  for (auto _ : state) benchmark::DoNotOptimize(solve_circuit(c).potentials.u()[1]);
}
BENCHMARK(BM_DiodeCircuit);

void BM_SimulatePaths(benchmark::State& state) {
  const RateMatrix a = birth_death(8);
  std::uint64_t k = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(simulate_path(a, 7, StateSet({0}), kNoHorizon, path_seed(1, k++)).terminal_time);
  }
}
BENCHMARK(BM_SimulatePaths);

}  // namespace

BENCHMARK_MAIN();
