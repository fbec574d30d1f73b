#include <benchmark/benchmark.h>

#include "detectornet/adam.hpp"
#include "detectornet/graph.hpp"
#include "detectornet/model.hpp"
#include "detectornet/ops.hpp"
#include "detectornet/random.hpp"
#include "detectornet/runtime.hpp"

namespace {

using namespace dnet;

Tensor uniform(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_values()) v = rng.uniform(-1.0, 1.0);
  return t;
}

DetectorGraph random_graph(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Tensor a(Shape{n, n});
  for (auto& v : a.mutable_values()) v = rng.uniform() < 0.05 ? rng.uniform() : 0.0;
  return DetectorGraph::from_adjacency(a);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Tensor a = uniform({n, n}, 1), b = uniform({n, n}, 2);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(128)->Arg(256)->Unit(benchmark::kMicrosecond);

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Tensor a = uniform({n, n}, 1), b = uniform({n, n}, 2);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  for (auto _ : state) {
    Tensor loss = sum(matmul(a, b));
    loss.backward();
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(128)->Unit(benchmark::kMicrosecond);

void BM_DynamicAdjacency(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t p = 12, c = 32;
  Rng rng(3);
  DynamicAdjacencyParams params{uniform({n, 10}, 4), uniform({n, 10}, 5), Tensor({n, n}, 1.0), Tensor({n, n}, 1.0),
                                uniform({p * c, c}, 6), uniform({p * c, c}, 7)};
  Tensor x = uniform({n, p, c}, 8);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(dynamic_adjacency(x, params));
}
BENCHMARK(BM_DynamicAdjacency)->Arg(16)->Arg(207)->Unit(benchmark::kMicrosecond);

ModelConfig default_model(std::size_t nodes) {
  ModelConfig c;
  c.nodes = nodes;
  return c;
}

void BM_ForwardDefault(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  DetectorNet model(default_model(n), random_graph(n, 9));
  Tensor x = uniform({1, n, 12, 2}, 10);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(x, Mode::eval));
}
BENCHMARK(BM_ForwardDefault)->Arg(16)->Arg(207)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const std::size_t n = 16, batch = static_cast<std::size_t>(state.range(0));
  ModelConfig c = default_model(n);
  c.hidden = 16;
  c.layers = 1;
  DetectorNet model(c, random_graph(n, 11));
  Tensor x = uniform({batch, n, 12, 2}, 12);
  Tensor y = uniform({batch, n, 12, 1}, 13);
  Tensor mask({batch, n, 12, 1}, 1.0);
  AdamState adam;
  Rng rng(14);
  for (auto _ : state) {
    model.params().zero_grad();
    MaskedLoss loss = masked_mae_loss(model.forward(x, Mode::train, &rng), y, mask);
    loss.value.backward();
    adam_step(model.params(), adam);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_TrainStep)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace

int main(int argc, char** argv) {
  dnet::tune_allocator_for_training();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
