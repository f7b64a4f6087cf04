#include <benchmark/benchmark.h>

#include "lsanet/network.hpp"

using namespace lsanet;

namespace {

PointCloud bench_cloud(int64_t n, uint64_t seed) {
  Rng rng(seed);
  PointCloud c;
  c.coords.resize(n);
  for (auto& p : c.coords) {
    p.x = static_cast<float>(rng.uniform(-1, 1));
    p.y = static_cast<float>(rng.uniform(-1, 1));
    p.z = static_cast<float>(rng.uniform(-1, 1));
  }
  return normalize_unit_sphere(std::move(c));
}

}  // namespace

static void BM_FarthestPointSample(benchmark::State& state) {
  const int64_t n = state.range(0);
  const int64_t m = state.range(1);
  PointCloud c = bench_cloud(n, 1);
  for (auto _ : state) {
    auto idx = farthest_point_sample(c, m);
    benchmark::DoNotOptimize(idx);
  }
  state.SetItemsProcessed(state.iterations() * n * m);
}
BENCHMARK(BM_FarthestPointSample)->Args({1024, 128})->Args({1024, 512})->Args({4096, 512});

static void BM_BallQuery(benchmark::State& state) {
  const int64_t n = state.range(0);
  const int64_t m = state.range(1);
  const int k = static_cast<int>(state.range(2));
  PointCloud c = bench_cloud(n, 2);
  auto centroids = farthest_point_sample(c, m);
  for (auto _ : state) {
    auto g = ball_query(c, centroids, 0.3f, k);
    benchmark::DoNotOptimize(g);
  }
  state.SetItemsProcessed(state.iterations() * n * m);
}
BENCHMARK(BM_BallQuery)->Args({1024, 128, 16})->Args({1024, 512, 32});

static void BM_LinearForward(benchmark::State& state) {
  const int64_t rows = state.range(0);
  const int64_t cin = state.range(1);
  const int64_t cout = state.range(2);
  Rng rng(3);
  Tensor<float> x({rows, cin}), w({cout, cin});
  for (int64_t i = 0; i < x.numel(); ++i) x.data()[i] = static_cast<float>(rng.uniform(-1, 1));
  for (int64_t i = 0; i < w.numel(); ++i) w.data()[i] = static_cast<float>(rng.uniform(-1, 1));
  for (auto _ : state) {
    auto y = ops::linear(x, w);
    benchmark::DoNotOptimize(y.data());
  }
  state.counters["GFLOP/s"] = benchmark::Counter(
      static_cast<double>(state.iterations()) * 2.0 * rows * cin * cout,
      benchmark::Counter::kIsRate, benchmark::Counter::kIs1000);
}
BENCHMARK(BM_LinearForward)
    ->Args({32768, 128, 64})
    ->Args({65536, 35, 32})
    ->Args({1024, 256, 256});

static void BM_DeskForwardInfer(benchmark::State& state) {
  NetworkConfig cfg = desk_config(4);
  LsaNet<float> net(cfg, 1);
  std::vector<PointCloud> batch;
  for (int i = 0; i < 8; ++i) batch.push_back(bench_cloud(1024, 10 + i));
  auto groupings = compute_groupings<float>(batch, cfg);
  for (auto _ : state) {
    FwdCtx<float> ctx;
    auto logits = net.forward(groupings, ctx);
    benchmark::DoNotOptimize(logits.data());
  }
  state.SetItemsProcessed(state.iterations() * batch.size());
}
BENCHMARK(BM_DeskForwardInfer)->Unit(benchmark::kMillisecond);

static void BM_ComputeGroupings(benchmark::State& state) {
  NetworkConfig cfg = desk_config(4);
  std::vector<PointCloud> batch;
  for (int i = 0; i < 8; ++i) batch.push_back(bench_cloud(1024, 20 + i));
  for (auto _ : state) {
    auto g = compute_groupings<float>(batch, cfg);
    benchmark::DoNotOptimize(g);
  }
  state.SetItemsProcessed(state.iterations() * batch.size());
}
BENCHMARK(BM_ComputeGroupings)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
