#include <random>

#include <benchmark/benchmark.h>

#include "bench_common.hpp"
#include "codemap/window_optimizer.hpp"

using namespace codemap;
using codemap::bench::PlaneWindow;

namespace {

std::vector<DepthCode> noisy_codes(const PlaneWindow& w, double sigma) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> noise(0.0, sigma);
  std::vector<DepthCode> out;
  for (const auto& d : w.decoders) {
    DepthCode c = DepthCode::zero(d->code_size());
    for (Eigen::Index i = 0; i < c.values.size(); ++i) c.values[i] = noise(rng);
    out.push_back(c);
  }
  return out;
}

void BM_RefineWindow(benchmark::State& state) {
  const auto& w = PlaneWindow::get();
  const auto codes = noisy_codes(w, 0.5);
  ProblemSettings s;
  s.solver.jobs = int(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(refine_window(w.frames(), w.timestamps(), codes, s));
}
BENCHMARK(BM_RefineWindow)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

void BM_ProblemGradient(benchmark::State& state) {
  const auto& w = PlaneWindow::get();
  const auto codes = noisy_codes(w, 0.5);
  const auto p = build_problem(w.frames(), w.timestamps(), codes, {});
  for (auto _ : state) benchmark::DoNotOptimize(problem_gradient(p, codes));
}
BENCHMARK(BM_ProblemGradient)->Unit(benchmark::kMillisecond);

}  // namespace
