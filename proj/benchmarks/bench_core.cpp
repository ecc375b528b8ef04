#include <benchmark/benchmark.h>

#include <numeric>
#include <vector>

#include "mfusion/linalg.hpp"
#include "mfusion/lmgp.hpp"
#include "mfusion/problems.hpp"
#include "mfusion/prondf.hpp"
#include "mfusion/sobol.hpp"

using namespace mfusion;

namespace {

Matrix spd(Eigen::Index n) {
  RngStream rng(1, "bench-spd");
  Matrix a(n, n);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  return a * a.transpose() + static_cast<double>(n) * Matrix::Identity(n, n);
}

void BM_Cholesky(benchmark::State& state) {
  const Matrix a = spd(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(cholesky(a));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Cholesky)->RangeMultiplier(2)->Range(32, 256)->Complexity(benchmark::oNCubed);

void BM_Sobol(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  std::vector<double> point(dim);
  SobolSequence seq(dim);
  for (auto _ : state) {
    seq.next(point);
    benchmark::DoNotOptimize(point.data());
  }
}
BENCHMARK(BM_Sobol)->Arg(1)->Arg(10);

// Profiled NLL and gradient on the generated Borehole training set.
void BM_LmgpNllGradient(benchmark::State& state) {
  const auto data = generate(borehole_problem(), 1).train;
  const auto scaled = Standardizer::fit(data).apply(data);
  const auto design = make_design(scaled);
  const auto yv = scaled.outputs();
  const Vector y = Eigen::Map<const Vector>(yv.data(), static_cast<Eigen::Index>(yv.size()));
  LmgpParameters p;
  p.omega = Vector::Constant(design.x.cols(), -0.5);
  p.source_map = Matrix::Constant(data.schema().num_sources, 2, 0.1);
  p.categorical_map = Matrix::Zero(0, 2);
  p.nugget = 1e-4;
  for (auto _ : state) benchmark::DoNotOptimize(profiled_neg_log_likelihood(p, design, y, true));
}
BENCHMARK(BM_LmgpNllGradient)->Unit(benchmark::kMillisecond);

// One Pro-NDF mini-batch loss and gradient at M realizations.
void BM_ProNdfLoss(benchmark::State& state) {
  const auto data = generate(rational_problem(), 1).train;
  const ProNdfConfig cfg;
  const auto layout = ProNdfLayout::make(data.schema(), cfg);
  const auto scaled = Standardizer::fit(data).apply(data);
  std::vector<std::size_t> rows(32);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  const auto batch = make_batch(scaled, rows);
  RngStream rng(2, "bench-loss");
  std::vector<double> params(static_cast<std::size_t>(layout.total));
  for (auto& v : params) v = 0.1 * rng.normal();
  const auto m = state.range(0);
  std::vector<Matrix> eps{Matrix(layout.c1, m), Matrix(layout.c2, m)};
  for (auto& e : eps)
    for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = rng.normal();
  std::vector<double> grad(params.size());
  for (auto _ : state) {
    std::fill(grad.begin(), grad.end(), 0.0);
    benchmark::DoNotOptimize(prondf_loss(layout, cfg, params.data(), batch, eps, grad.data()));
  }
}
BENCHMARK(BM_ProNdfLoss)->Arg(50)->Arg(200)->Unit(benchmark::kMicrosecond);

}  // namespace
BENCHMARK_MAIN();
