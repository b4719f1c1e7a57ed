#include <benchmark/benchmark.h>

#include "qpat/acoustics.hpp"
#include "qpat/experiment.hpp"
#include "qpat/transport.hpp"

using namespace qpat;

static void BM_TransportSolve(benchmark::State& state) {
  const SpatialMesh mesh(static_cast<int>(state.range(0)));
  const AngularGrid grid = build_angular_grid(16);
  const ScatteringMatrix kmat = assemble_scattering_matrix(grid, {0.6});
  const CoefficientPair c = make_phantom(PhantomSpec::standard(), mesh);
  const IlluminationPattern f = make_bottom_illumination(mesh, grid);
  for (auto _ : state) {
    const TransportSystem sys(mesh, grid, c, kmat);
    benchmark::DoNotOptimize(solve_forward(sys, f));
  }
}
BENCHMARK(BM_TransportSolve)->Arg(32)->Arg(61)->Unit(benchmark::kMillisecond);

static void BM_WaveApply(benchmark::State& state) {
  const SpatialMesh mesh(static_cast<int>(state.range(0)));
  const DetectorGeometry geom = DetectorGeometry::half_circle(120);
  const WaveOperator wave(mesh, geom, TimeGrid{3.5, 600}, build_cutoff(geom, mesh, 0.08));
  const Eigen::VectorXd h = Eigen::VectorXd::Ones(mesh.n_vertices());
  const Eigen::MatrixXd v = Eigen::MatrixXd::Ones(120, 600);
  for (auto _ : state) {
    benchmark::DoNotOptimize(wave.apply(h));
    benchmark::DoNotOptimize(wave.apply_transpose(v));
  }
}
BENCHMARK(BM_WaveApply)->Arg(32)->Arg(61)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
