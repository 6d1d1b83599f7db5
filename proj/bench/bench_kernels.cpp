// Serial reference vs OpenMP kernels. Run with OMP_NUM_THREADS set to the
// thread count of interest.

#include <benchmark/benchmark.h>

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "logoproxy/consolidation.hpp"
#include "logoproxy/geometry.hpp"
#include "logoproxy/retrieval.hpp"

namespace {

using namespace logoproxy;

std::vector<Box> random_boxes(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(0, 900), size(5, 100);
  std::vector<Box> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(Box::from_xywh(pos(rng), pos(rng), size(rng), size(rng)));
  return out;
}

Embedding random_unit(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> g(0, 1);
  Embedding v(dim);
  double sq = 0.0;
  for (double& x : v) {
    x = g(rng);
    sq += x * x;
  }
  for (double& x : v) x /= std::sqrt(sq);
  return v;
}

struct RetrievalData {
  AnchorIndex index;
  std::vector<Embedding> queries;
};

RetrievalData retrieval_data(std::size_t anchors, std::size_t queries) {
  std::mt19937_64 rng(7);
  constexpr std::size_t kDim = 128;
  std::vector<AnchorEntry> entries;
  for (std::size_t i = 0; i < anchors; ++i)
    entries.push_back({random_unit(rng, kDim), static_cast<Label>(i % 50), "a" + std::to_string(i)});
  std::vector<Embedding> q;
  for (std::size_t i = 0; i < queries; ++i) q.push_back(random_unit(rng, kDim));
  return {AnchorIndex(std::move(entries)), std::move(q)};
}

// Images with a few logos each, every logo drawn by several workers.
std::vector<ImageRecord> annotated_images(std::size_t count) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> pos(0, 500), size(20, 120), jitter(-4, 4);
  std::uniform_int_distribution<int> logos(1, 6), workers(3, 12);
  std::vector<ImageRecord> out;
  for (std::size_t i = 0; i < count; ++i) {
    ImageRecord img{"img" + std::to_string(i), "brand" + std::to_string(i % 20), 640.0, 640.0, {}};
    const int n_logos = logos(rng);
    for (int l = 0; l < n_logos; ++l) {
      const Box truth = Box::from_xywh(pos(rng), pos(rng), size(rng), size(rng));
      const int n_workers = workers(rng);
      for (int w = 0; w < n_workers; ++w) {
        Box b{truth.x_min + jitter(rng), truth.y_min + jitter(rng), truth.x_max + jitter(rng),
              truth.y_max + jitter(rng)};
        img.annotations.push_back({img.image_id, "w" + std::to_string(w), LogoLabel::kOneLogo, b});
      }
    }
    out.push_back(std::move(img));
  }
  return out;
}

void BM_PairwiseDistancesSerial(benchmark::State& state) {
  const auto boxes = random_boxes(static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(pairwise_distances_serial(boxes));
}

void BM_PairwiseDistances(benchmark::State& state) {
  const auto boxes = random_boxes(static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(pairwise_distances(boxes));
}

void BM_KnnBatchSerial(benchmark::State& state) {
  const auto data = retrieval_data(static_cast<std::size_t>(state.range(0)), 256);
  for (auto _ : state) benchmark::DoNotOptimize(knn_batch_serial(data.index, data.queries, 5));
}

void BM_KnnBatch(benchmark::State& state) {
  const auto data = retrieval_data(static_cast<std::size_t>(state.range(0)), 256);
  for (auto _ : state) benchmark::DoNotOptimize(knn_batch(data.index, data.queries, 5));
}

void BM_ConsolidateAllSerial(benchmark::State& state) {
  const auto images = annotated_images(static_cast<std::size_t>(state.range(0)));
  const ConsolidationConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(consolidate_all_serial(images, cfg));
}

void BM_ConsolidateAll(benchmark::State& state) {
  const auto images = annotated_images(static_cast<std::size_t>(state.range(0)));
  const ConsolidationConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(consolidate_all(images, cfg));
}

}  // namespace

BENCHMARK(BM_PairwiseDistancesSerial)->RangeMultiplier(4)->Range(64, 1024);
BENCHMARK(BM_PairwiseDistances)->RangeMultiplier(4)->Range(64, 1024);
BENCHMARK(BM_KnnBatchSerial)->Arg(1000)->Arg(10000);
BENCHMARK(BM_KnnBatch)->Arg(1000)->Arg(10000);
BENCHMARK(BM_ConsolidateAllSerial)->Arg(100)->Arg(1000);
BENCHMARK(BM_ConsolidateAll)->Arg(100)->Arg(1000);

BENCHMARK_MAIN();
