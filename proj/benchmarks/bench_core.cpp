#include <benchmark/benchmark.h>

#include "fcns/corpus.hpp"
#include "fcns/metrics.hpp"
#include "fcns/net.hpp"
#include "fcns/rng.hpp"

namespace {

using namespace fcns;

net::Batch random_batch(int n, int size, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Planar> samples;
  for (int i = 0; i < n; ++i) {
    Planar p(3, size, size);
    for (auto& v : p.values) v = static_cast<float>(rng.normal());
    samples.push_back(std::move(p));
  }
  return net::stack(samples);
}

void BM_DeskForward(benchmark::State& state) {
  const auto config = net::NetConfig::desk(5);
  const auto params = net::build_model(config, 1);
  const auto batch = random_batch(static_cast<int>(state.range(0)), 224, 2);
  for (auto _ : state) benchmark::DoNotOptimize(net::forward(config, params, batch));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_DeskForward)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_DeskTrainStep(benchmark::State& state) {
  const auto config = net::NetConfig::desk(5);
  const auto params = net::build_model(config, 1);
  const int n = static_cast<int>(state.range(0));
  const auto batch = random_batch(n, 224, 3);
  std::vector<int> labels(n);
  for (int i = 0; i < n; ++i) labels[i] = i % 5;
  const net::LossSpec loss{{1.0, 1.0, 1.0, 1.0, 1.0}};
  for (auto _ : state) {
    benchmark::DoNotOptimize(net::gradients(config, params, batch, labels, loss));
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_DeskTrainStep)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_RocAuc(benchmark::State& state) {
  Rng rng(4);
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<double> scores(n);
  std::vector<bool> pos(n);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = rng.uniform();
    pos[i] = rng.uniform() < 0.3;
  }
  for (auto _ : state) benchmark::DoNotOptimize(metrics::roc_auc(scores, pos));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_RocAuc)->Arg(1000)->Arg(100000);

void BM_EvalTransform(benchmark::State& state) {
  Image img(320, 256, 1);
  Rng rng(5);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  const corpus::PreprocessConfig config;
  for (auto _ : state) benchmark::DoNotOptimize(corpus::eval_transform(img, config));
}
BENCHMARK(BM_EvalTransform)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
