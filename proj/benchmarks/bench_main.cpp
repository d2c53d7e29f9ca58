#include <benchmark/benchmark.h>

#include <random>

#include "uapguard/adversarial.hpp"
#include "uapguard/model_zoo.hpp"
#include "uapguard/strip.hpp"

using namespace uapguard;

namespace {

Tensor random_batch(std::size_t n, InputSpec spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensor t({n, spec.channels, spec.height, spec.width});
  for (float& v : t.data()) v = u(rng);
  return t;
}

LabeledDataset random_set(std::size_t n, InputSpec spec, std::uint64_t seed) {
  LabeledDataset ds;
  ds.images = random_batch(n, spec, seed);
  ds.class_count = 10;
  for (std::size_t i = 0; i < n; ++i) ds.labels.push_back(static_cast<int>(i % 10));
  return ds;
}

InputSpec spec_for(int64_t channels) {
  return channels == 1 ? InputSpec{1, 28, 28} : InputSpec{3, 32, 32};
}

void BM_Forward(benchmark::State& state) {
  const InputSpec spec = spec_for(state.range(0));
  const std::size_t batch = static_cast<std::size_t>(state.range(1));
  const Model m = make_small_cnn(spec, 10, 1);
  const Tensor x = random_batch(batch, spec, 2);
  for (auto _ : state) benchmark::DoNotOptimize(m.forward(x));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(batch));
}
BENCHMARK(BM_Forward)->Args({1, 32})->Args({3, 32})->Args({1, 256});

void BM_ForwardBackward(benchmark::State& state) {
  const InputSpec spec = spec_for(state.range(0));
  const std::size_t batch = 32;
  const Model m = make_small_cnn(spec, 10, 1);
  const Tensor x = random_batch(batch, spec, 2);
  std::vector<int> labels(batch);
  for (std::size_t i = 0; i < batch; ++i) labels[i] = static_cast<int>(i % 10);
  auto grads = m.zero_gradients();
  for (auto _ : state) {
    GradientTape tape;
    const Tensor logits = m.forward(x, tape);
    Tensor g;
    softmax_cross_entropy(logits, labels, &g);
    benchmark::DoNotOptimize(m.backward(tape, g, &grads));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(batch));
}
BENCHMARK(BM_ForwardBackward)->Arg(1)->Arg(3);

void BM_DeepFool(benchmark::State& state) {
  const InputSpec spec = spec_for(state.range(0));
  const Model m = make_small_cnn(spec, 10, 3);
  const Tensor x = random_batch(1, spec, 4).item(0);
  for (auto _ : state) benchmark::DoNotOptimize(deepfool(m, x, 50, 0.02f));
}
BENCHMARK(BM_DeepFool)->Arg(1)->Arg(3);

void BM_UapPass(benchmark::State& state) {
  const InputSpec spec = spec_for(state.range(0));
  const Model m = make_small_cnn(spec, 10, 3);
  const LabeledDataset ds = random_set(64, spec, 5);
  UapConfig cfg;
  cfg.max_passes = 1;
  for (auto _ : state) benchmark::DoNotOptimize(generate_uap(m, ds, cfg));
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_UapPass)->Arg(1)->Arg(3)->Unit(benchmark::kMillisecond);

void BM_StripScore(benchmark::State& state) {
  const InputSpec spec{3, 32, 32};
  const Model m = make_small_cnn(spec, 10, 3);
  const Tensor overlays = random_batch(20, spec, 6);
  const Tensor x = random_batch(1, spec, 7).item(0);
  for (auto _ : state) benchmark::DoNotOptimize(entropy_score(m, x, overlays, 0.5f));
}
BENCHMARK(BM_StripScore);

}  // namespace

BENCHMARK_MAIN();
