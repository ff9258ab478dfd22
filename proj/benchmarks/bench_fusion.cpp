#include <benchmark/benchmark.h>

#include "codemap/fusion.hpp"
#include "codemap/synth.hpp"

using namespace codemap;

namespace {

struct BoxScene {
  SceneSpec spec = preset_scene("box");
  std::vector<DenseImage> depths;
  BoxScene() {
    for (std::size_t f = 0; f < spec.trajectory.size(); ++f) depths.push_back(render(spec, f).depth);
  }
  static const BoxScene& get() {
    static const BoxScene s;
    return s;
  }
};

TsdfVolume empty_volume(const BoxScene& s) {
  const auto& box = std::get<BoxPrimitive>(s.spec.primitives[0]);
  return TsdfVolume::covering(box.min, box.max);
}

void BM_TsdfIntegrate(benchmark::State& state) {
  const auto& s = BoxScene::get();
  TsdfVolume vol = empty_volume(s);
  std::size_t f = 0;
  for (auto _ : state) {
    vol.integrate(s.depths[f], s.spec.trajectory[f], s.spec.intrinsics);
    f = (f + 1) % s.depths.size();
  }
}
BENCHMARK(BM_TsdfIntegrate)->Unit(benchmark::kMillisecond);

void BM_MarchingCubes(benchmark::State& state) {
  const auto& s = BoxScene::get();
  TsdfVolume vol = empty_volume(s);
  for (std::size_t f = 0; f < s.depths.size(); ++f) vol.integrate(s.depths[f], s.spec.trajectory[f], s.spec.intrinsics);
  for (auto _ : state) benchmark::DoNotOptimize(extract_mesh(vol));
}
BENCHMARK(BM_MarchingCubes)->Unit(benchmark::kMillisecond);

}  // namespace
