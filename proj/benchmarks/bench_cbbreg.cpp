#include <benchmark/benchmark.h>

#include <cmath>

#include "cbbreg/distributions.hpp"
#include "cbbreg/links.hpp"
#include "cbbreg/regression.hpp"
#include "cbbreg/simulation.hpp"

using namespace cbbreg;

namespace {

Dataset contaminated_data(std::size_t n) {
  return contaminate(generate_binomial_data(n, 10, {2.0, 1.0}, 1), 0.05, 2);
}

ModelSpec pi_on_x(Family family) {
  ModelSpec spec;
  spec.pi_terms = {"x"};
  spec.family = family;
  return spec;
}

void BM_CbbLogPmf(benchmark::State& state) {
  const auto m = state.range(0);
  const CBBParams p{0.3, 0.2, 0.1, 5.0};
  for (auto _ : state) {
    double total = 0.0;
    for (std::int64_t y = 0; y <= m; ++y) total += cbb_log_pmf({y, m}, p);
    benchmark::DoNotOptimize(total);
  }
  state.SetItemsProcessed(state.iterations() * (m + 1));
}
BENCHMARK(BM_CbbLogPmf)->Arg(10)->Arg(100)->Arg(1000);

void BM_BBKernel(benchmark::State& state) {
  const auto m = state.range(0);
  for (auto _ : state) {
    double total = 0.0;
    for (std::int64_t y = 0; y <= m; ++y) total += detail::bb_log_kernel_value(y, m, 0.3, 0.2);
    benchmark::DoNotOptimize(total);
  }
  state.SetItemsProcessed(state.iterations() * (m + 1));
}
BENCHMARK(BM_BBKernel)->Arg(10)->Arg(16)->Arg(100);

void BM_LogLikelihoodGradient(benchmark::State& state) {
  const Dataset d = contaminated_data(static_cast<std::size_t>(state.range(0)));
  const Model model(d, pi_on_x(Family::contaminated_beta_binomial));
  const Coefficients c{Eigen::Vector2d(2.0, 1.0), Eigen::VectorXd::Constant(1, -1.5),
                       Eigen::VectorXd::Constant(1, -2.0), Eigen::VectorXd::Constant(1, 1.0)};
  Eigen::VectorXd g;
  for (auto _ : state) benchmark::DoNotOptimize(model.log_likelihood(c, g));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LogLikelihoodGradient)->Arg(500)->Arg(2000);

void BM_FitBetaBinomial(benchmark::State& state) {
  const Dataset d = contaminated_data(500);
  const ModelSpec spec = pi_on_x(Family::beta_binomial);
  for (auto _ : state) benchmark::DoNotOptimize(fit(d, spec, std::nullopt, FitControl{}).log_likelihood);
}
BENCHMARK(BM_FitBetaBinomial)->Unit(benchmark::kMillisecond);

void BM_FitContaminated(benchmark::State& state) {
  const Dataset d = contaminated_data(static_cast<std::size_t>(state.range(0)));
  const ModelSpec spec = pi_on_x(Family::contaminated_beta_binomial);
  for (auto _ : state) benchmark::DoNotOptimize(fit(d, spec, std::nullopt, FitControl{}).log_likelihood);
}
BENCHMARK(BM_FitContaminated)->Arg(500)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
