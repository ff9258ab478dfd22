#include <benchmark/benchmark.h>

#include "bench_common.hpp"

using namespace codemap;
using codemap::bench::PlaneWindow;

namespace {

void BM_AnalyticDecoderBuild(benchmark::State& state) {
  const auto& kf = PlaneWindow::get().packets[0];
  AnalyticDecoderConfig cfg;
  cfg.code_size = int(state.range(0));
  for (auto _ : state)
    benchmark::DoNotOptimize(make_analytic_decoder({kf.intensity, kf.sparse_depth, kf.rep_error}, cfg));
}
BENCHMARK(BM_AnalyticDecoderBuild)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_DecodeDepth(benchmark::State& state) {
  const auto& dec = *PlaneWindow::get().decoders[0];
  DepthCode c = DepthCode::zero(dec.code_size());
  c.values.setConstant(0.1);
  for (auto _ : state) benchmark::DoNotOptimize(dec.decode_depth(c));
  state.SetItemsProcessed(state.iterations() * std::int64_t(dec.width()) * dec.height());
}
BENCHMARK(BM_DecodeDepth)->Unit(benchmark::kMicrosecond);

}  // namespace
