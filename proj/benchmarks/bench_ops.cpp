#include <random>

#include <benchmark/benchmark.h>

#include "gcnkit/blocks.hpp"
#include "gcnkit/ops.hpp"

using namespace gcnkit;

namespace {

Tensor noise(Shape s, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> n;
  Tensor t(s);
  for (float& v : t.data()) v = n(rng);
  return t;
}

// 3x3 conv, 64 -> 64 channels, square input of side range(0).
void BM_Conv3x3(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const Tensor x = noise({1, 64, side, side}, 1), w = noise({64, 64, 3, 3}, 2);
  for (auto _ : state) {
    Tensor y = conv2d(constant(x), constant(w), Var(), {{1, 1}, {1, 1}}).value();
    benchmark::DoNotOptimize(y.data().data());
  }
  state.counters["MAC/s"] = benchmark::Counter(64.0 * 64 * 9 * side * side, benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv3x3)->Arg(16)->Arg(32)->Arg(64);

// GCN block against the trivial k x k conv it stands in for.
void BM_GcnBlock(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  Module m = make_gcn_block({k, 128, 21});
  m.init(3);
  const Tensor x = noise({1, 128, 32, 32}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(m.infer(x).data().data());
}
BENCHMARK(BM_GcnBlock)->Arg(3)->Arg(7)->Arg(15);

void BM_TrivialBlock(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  Module m = make_trivial_conv_block(k, 128, 21);
  m.init(3);
  const Tensor x = noise({1, 128, 32, 32}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(m.infer(x).data().data());
}
BENCHMARK(BM_TrivialBlock)->Arg(3)->Arg(7)->Arg(15);

void BM_ConvBackward(benchmark::State& state) {
  const Tensor x = noise({2, 32, 32, 32}, 5), w = noise({32, 32, 3, 3}, 6);
  for (auto _ : state) {
    Tape tape;
    Var xv = tape.leaf(x), wv = tape.leaf(w);
    tape.backward(sum(conv2d(xv, wv, Var(), {{1, 1}, {1, 1}})));
    benchmark::DoNotOptimize(wv.grad().data().data());
  }
}
BENCHMARK(BM_ConvBackward);

}  // namespace
