// Microbenchmarks for the training, aggregation and statistics hot paths.
#include <benchmark/benchmark.h>

#include <cmath>
#include <vector>

#include "fedage/cohort.hpp"
#include "fedage/federation.hpp"
#include "fedage/model.hpp"
#include "fedage/rng.hpp"
#include "fedage/stats.hpp"

namespace {

using namespace fedage;

model::RegressionData make_data(std::size_t n, std::size_t d,
                                std::uint64_t seed) {
  model::RegressionData data;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row;
    row.reserve(d);
    for (std::size_t j = 0; j < d; ++j) row.push_back(rng.normal());
    data.x.push_back(std::move(row));
    data.y.push_back(70.0 + rng.normal(0.0, 10.0));
  }
  return data;
}

void BM_PolynomialExpansion(benchmark::State& state) {
  std::vector<double> values(static_cast<std::size_t>(state.range(0)), 0.5);
  for (auto _ : state)
    benchmark::DoNotOptimize(model::expand_polynomial_values(values, 2));
}
BENCHMARK(BM_PolynomialExpansion)->Arg(32)->Arg(64);

void BM_LinearEpoch(benchmark::State& state) {
  const auto data = make_data(static_cast<std::size_t>(state.range(0)), 32, 1);
  model::TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.schedule = model::LrSchedule::constant(0.01, 1);
  model::ModelParams params;
  params.weights.assign(32, 0.0);
  params.intercept = 70.0;
  std::uint64_t epoch = 0;
  for (auto _ : state)
    model::linear_epoch_inplace(params, data, 0.01, cfg, ++epoch);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LinearEpoch)->Arg(1024)->Arg(4096);

void BM_FedAvgAggregate(benchmark::State& state) {
  Rng rng(7);
  std::vector<fed::ClientUpdate> updates;
  for (int c = 0; c < 16; ++c) {
    fed::ClientUpdate u{c + 1, 100 + 10 * c, {}};
    for (int j = 0; j < static_cast<int>(state.range(0)); ++j)
      u.params.weights.push_back(rng.normal());
    updates.push_back(std::move(u));
  }
  for (auto _ : state)
    benchmark::DoNotOptimize(fed::aggregate_fedavg(updates));
}
BENCHMARK(BM_FedAvgAggregate)->Arg(560)->Arg(4417);

void BM_WilcoxonLargeN(benchmark::State& state) {
  Rng rng(3);
  std::vector<double> diffs;
  for (int i = 0; i < state.range(0); ++i) diffs.push_back(rng.normal());
  for (auto _ : state)
    benchmark::DoNotOptimize(stats::wilcoxon_signed_rank(diffs));
}
BENCHMARK(BM_WilcoxonLargeN)->Arg(1023)->Arg(10230);

void BM_LogisticFit(benchmark::State& state) {
  Rng rng(11);
  std::vector<std::vector<double>> design;
  std::vector<int> y;
  for (int i = 0; i < state.range(0); ++i) {
    std::vector<double> row = {1.0};
    for (int j = 0; j < 12; ++j) row.push_back(rng.normal());
    const double logit = -0.4 + 0.3 * row[1] - 0.2 * row[2];
    design.push_back(std::move(row));
    y.push_back(rng.bernoulli(1.0 / (1.0 + std::exp(-logit))) ? 1 : 0);
  }
  for (auto _ : state)
    benchmark::DoNotOptimize(stats::logistic_fit(design, y));
}
BENCHMARK(BM_LogisticFit)->Arg(1023);

void BM_GenerateCohort(benchmark::State& state) {
  cohort::CohortSpec spec;
  spec.seed = 21;
  for (auto _ : state) {
    spec.seed++;
    benchmark::DoNotOptimize(cohort::generate_cohort(spec));
  }
}
BENCHMARK(BM_GenerateCohort);

}  // namespace

BENCHMARK_MAIN();
