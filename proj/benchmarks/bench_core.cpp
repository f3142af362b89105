#include <benchmark/benchmark.h>

#include "fedcm/impute.hpp"
#include "fedcm/moments.hpp"
#include "fedcm/plugin.hpp"
#include "fedcm/popgen.hpp"
#include "fedcm/ridge.hpp"

using namespace fedcm;

namespace {

struct Setup {
  PopulationSpec pop;
  std::vector<ClientSpec> clients;
  Dataset data;
};

Setup make_setup(std::size_t d, std::size_t k, std::size_t n) {
  Rng rng(1);
  PopulationSpec pop(toeplitz_covariance(d, 0.5), Vector::Ones(static_cast<Index>(d)));
  auto clients = make_clients(draw_bernoulli_patterns(k, d, 0.6, rng), std::vector<double>(k, 1.0 / static_cast<double>(k)));
  Dataset data = sample_dataset(pop, clients, n, rng);
  return {std::move(pop), std::move(clients), std::move(data)};
}

}  // namespace

static void BM_ZeroImputedMoments(benchmark::State& state) {
  const auto s = make_setup(static_cast<std::size_t>(state.range(0)), 10, 5000);
  for (auto _ : state) benchmark::DoNotOptimize(aggregate_zero_imputed(local_moments_by_client(s.data)));
}
BENCHMARK(BM_ZeroImputedMoments)->Arg(10)->Arg(50);

static void BM_ComponentwisePlugin(benchmark::State& state) {
  const auto s = make_setup(static_cast<std::size_t>(state.range(0)), 10, 5000);
  const auto cw = cw_moments_direct(s.data);
  for (auto _ : state) benchmark::DoNotOptimize(build_clientwise_plugin(cw, s.clients));
}
BENCHMARK(BM_ComponentwisePlugin)->Arg(10)->Arg(50);

static void BM_OptimalImputeRidge(benchmark::State& state) {
  const auto s = make_setup(static_cast<std::size_t>(state.range(0)), 10, 5000);
  for (auto _ : state) {
    const auto map = fit_optimal_imputer(s.pop.sigma(), s.clients, CovarianceSource::Population);
    const auto imp = apply_imputer(map, s.data);
    benchmark::DoNotOptimize(ridge_closed_form(imp, 0.1));
  }
}
BENCHMARK(BM_OptimalImputeRidge)->Arg(10)->Arg(50);

static void BM_FederatedIce(benchmark::State& state) {
  const auto s = make_setup(10, 10, 5000);
  for (auto _ : state)
    benchmark::DoNotOptimize(federated_ice(s.data, {static_cast<std::size_t>(state.range(0))}, fit_zero_imputer(s.clients)));
}
BENCHMARK(BM_FederatedIce)->Arg(1)->Arg(5);
BENCHMARK_MAIN();
