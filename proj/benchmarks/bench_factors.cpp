#include <benchmark/benchmark.h>

#include "bench_common.hpp"

using namespace codemap;
using codemap::bench::PlaneWindow;

namespace {

std::vector<std::size_t> grid(int stride) {
  const auto& k = PlaneWindow::get().packets.front().intrinsics;
  return grid_samples(k.width, k.height, stride);
}

void BM_Photometric(benchmark::State& state) {
  const auto& w = PlaneWindow::get();
  const auto samples = grid(int(state.range(0)));
  const Eigen::VectorXd c = Eigen::VectorXd::Zero(w.decoders[0]->code_size());
  EvalOptions o;
  o.jacobians = state.range(1) != 0;
  for (auto _ : state) benchmark::DoNotOptimize(photometric_factor(w.frame(0), w.frame(1), c, samples, o));
  state.SetItemsProcessed(state.iterations() * std::int64_t(samples.size()));
}
BENCHMARK(BM_Photometric)->Args({4, 1})->Args({4, 0})->Args({1, 1})->Unit(benchmark::kMicrosecond);

void BM_Geometric(benchmark::State& state) {
  const auto& w = PlaneWindow::get();
  const auto samples = grid(int(state.range(0)));
  const Eigen::VectorXd c = Eigen::VectorXd::Zero(w.decoders[0]->code_size());
  for (auto _ : state) benchmark::DoNotOptimize(geometric_factor(w.frame(0), w.frame(1), c, c, samples, {}));
  state.SetItemsProcessed(state.iterations() * std::int64_t(samples.size()));
}
BENCHMARK(BM_Geometric)->Arg(4)->Arg(1)->Unit(benchmark::kMicrosecond);

void BM_Reprojection(benchmark::State& state) {
  const auto& w = PlaneWindow::get();
  const auto* m = w.packets[0].matches_with(w.packets[1].id);
  const Eigen::VectorXd c = Eigen::VectorXd::Zero(w.decoders[0]->code_size());
  for (auto _ : state) benchmark::DoNotOptimize(reprojection_factor(w.frame(0), w.frame(1), c, *m, {}));
  state.SetItemsProcessed(state.iterations() * std::int64_t(m->size()));
}
BENCHMARK(BM_Reprojection)->Unit(benchmark::kMicrosecond);

}  // namespace
