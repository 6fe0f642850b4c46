#include <benchmark/benchmark.h>

#include "gcnkit/data.hpp"
#include "gcnkit/evaluation.hpp"
#include "gcnkit/network.hpp"
#include "gcnkit/training.hpp"

using namespace gcnkit;

namespace {

SegModel tiny(int k, int canvas) {
  SegConfig c;
  c.classes = 5;
  c.k = k;
  c.canvas = {canvas, canvas};
  SegModel m(builtin_arch(BackboneVariant::tiny), c);
  m.init(1);
  return m;
}

// One SGD step (batch 4) on the desk-scale setup.
void BM_TrainStep(benchmark::State& state) {
  SegModel m = tiny(static_cast<int>(state.range(0)), 64);
  const Dataset d = synth_shapes(1, 4, 64, 5);
  SgdConfig cfg;
  cfg.batch_size = 4;
  TrainOptions o;
  o.epochs = 1;
  for (auto _ : state) benchmark::DoNotOptimize(train(m, d, cfg, o).loss.back());
}
BENCHMARK(BM_TrainStep)->Arg(1)->Arg(7)->Unit(benchmark::kMillisecond);

void BM_Predict(benchmark::State& state) {
  const int canvas = static_cast<int>(state.range(0));
  SegModel m = tiny(7, canvas);
  const Tensor x = synth_sample(2, 0, canvas, 5).image;
  for (auto _ : state) benchmark::DoNotOptimize(m.predict(x).data().data());
}
BENCHMARK(BM_Predict)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_BoundaryMasks(benchmark::State& state) {
  const LabelMap gt = synth_sample(3, 0, 256, 5).label;
  for (auto _ : state) benchmark::DoNotOptimize(boundary_internal_masks(gt, 7.0).boundary.data());
}
BENCHMARK(BM_BoundaryMasks)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
