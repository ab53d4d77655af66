// Kernel timings: parallel vs serial oracle sweep, Triple-Q and LSVI episodes.

#include <benchmark/benchmark.h>

#include "ncmdp/envs.hpp"
#include "ncmdp/linear.hpp"
#include "ncmdp/log.hpp"
#include "ncmdp/oracle.hpp"
#include "ncmdp/tripleq.hpp"

namespace {

ncmdp::NonstationaryCmdp grid(int K) {
  ncmdp::GridWorldConfig cfg;
  cfg.episodes = K;
  return ncmdp::build_gridworld(cfg);
}

void BM_OracleSweepParallel(benchmark::State& state) {
  const auto cmdp = grid(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(ncmdp::sweep_optimal_values(cmdp));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_OracleSweepParallel)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_OracleSweepSerial(benchmark::State& state) {
  const auto cmdp = grid(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(ncmdp::sweep_optimal_values_serial(cmdp));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_OracleSweepSerial)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_TripleQEpisodes(benchmark::State& state) {
  const int K = static_cast<int>(state.range(0));
  const auto cmdp = grid(K);
  const auto params = ncmdp::default_params(K, 1.0, cmdp.num_states(), cmdp.num_actions(),
                                            cmdp.horizon());
  ncmdp::TripleQOptions opts;
  opts.evaluate_policy = false;
  for (auto _ : state) {
    ncmdp::Rng rng(1);
    benchmark::DoNotOptimize(ncmdp::run_tripleq(cmdp, params, rng, opts));
  }
  state.SetItemsProcessed(state.iterations() * K);
}
BENCHMARK(BM_TripleQEpisodes)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_LsviEpisodes(benchmark::State& state) {
  const int K = static_cast<int>(state.range(0));
  ncmdp::Rng gen(3);
  auto truth = ncmdp::random_linear_cmdp(6, 3, 4, 5, K, 0.2, gen);
  truth.rho = 1.0;
  truth.slater_delta = 0.5;
  const auto cmdp = ncmdp::build_linear_cmdp(truth);
  const auto params = ncmdp::lsvi_default_params(K, 1.0, 4, 3, 5, 0.5);
  ncmdp::LsviOptions opts;
  opts.evaluate_policy = false;
  for (auto _ : state) {
    ncmdp::Rng rng(1);
    benchmark::DoNotOptimize(ncmdp::run_lsvi(cmdp, truth.features, params, rng, opts));
  }
  state.SetItemsProcessed(state.iterations() * K);
}
BENCHMARK(BM_LsviEpisodes)->Arg(200)->Unit(benchmark::kMillisecond);

}  // namespace

int main(int argc, char** argv) {
  // The theory eps always exceeds rho on the grid; one warning per run is noise here.
  ncmdp::set_warning_sink([](std::string_view) {});
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
