#include <benchmark/benchmark.h>

#include <optional>
#include <random>
#include <vector>

#include <torch/torch.h>

#include "toap/attack.hpp"
#include "toap/centers.hpp"
#include "toap/cg.hpp"
#include "toap/dataset.hpp"
#include "toap/hash_model.hpp"
#include "toap/postproc.hpp"
#include "toap/retrieval.hpp"

namespace {

torch::Tensor random_codes(int64_t n, int64_t k) { return torch::randint(0, 2, {n, k}).to(torch::kFloat32) * 2 - 1; }

void BM_MeanAveragePrecision(benchmark::State& state) {
  torch::manual_seed(1);
  const auto n = state.range(0);
  const auto queries = random_codes(n / 4, 32), db = random_codes(n, 32);
  std::vector<int> ql(static_cast<std::size_t>(n / 4)), dl(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < ql.size(); ++i) ql[i] = static_cast<int>(i % 10);
  for (std::size_t i = 0; i < dl.size(); ++i) dl[i] = static_cast<int>(i % 10);
  for (auto _ : state) benchmark::DoNotOptimize(toap::mean_average_precision(queries, ql, db, dl, 300));
}
BENCHMARK(BM_MeanAveragePrecision)->Arg(400)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_DiffJpeg(benchmark::State& state) {
  torch::manual_seed(2);
  const auto x = torch::rand({16, 3, state.range(0), state.range(0)});
  const bool hard = state.range(1) != 0;
  for (auto _ : state) benchmark::DoNotOptimize(toap::diff_jpeg(x, 60, {.hard = hard}));
}
BENCHMARK(BM_DiffJpeg)->Args({64, 1})->Args({64, 0})->Args({224, 1})->Unit(benchmark::kMillisecond);

void BM_CgLocalGlobal(benchmark::State& state) {
  torch::manual_seed(3);
  toap::CompressionGenerator cg;
  const auto size = state.range(0);
  const auto x = torch::rand({16, 3, size, size});
  const auto spec = toap::GridSpec::default_for(size);
  torch::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(toap::cg_local_global(cg, x, spec));
}
BENCHMARK(BM_CgLocalGlobal)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_MetaStep(benchmark::State& state) {
  const auto samples = toap::generate_synthetic(4, 8, 64, 4);
  const auto images = toap::stack_pixels(samples);
  const auto labels = toap::labels_of(samples);
  toap::HashModel model("convA", 32, 64);
  model->freeze();
  const auto centers = toap::build_center_set(toap::encode(model, images), labels, 4, 3, 0, 4);
  toap::CompressionGenerator cg;
  toap::AttackConfig cfg;
  cfg.use_cg = static_cast<toap::CgMode>(state.range(0));
  const auto delta = torch::zeros({3, 64, 64});
  std::mt19937_64 rng(5);
  const auto targets = toap::assign_targets(labels, centers, toap::TargetKind::Cluster, rng);
  const auto grid = cfg.grid_for(64);
  for (auto _ : state) {
    benchmark::DoNotOptimize(toap::meta_step(delta, model, cg, images, targets, std::nullopt, cfg, grid).delta);
  }
}
BENCHMARK(BM_MetaStep)
    ->Arg(static_cast<int>(toap::CgMode::None))
    ->Arg(static_cast<int>(toap::CgMode::LocalGlobal))
    ->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
