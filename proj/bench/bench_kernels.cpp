// Serial reference vs OpenMP for the three parallel kernels.
#include <benchmark/benchmark.h>

#include <omp.h>

#include "hdsse/coordinator.hpp"
#include "hdsse/scenario.hpp"

namespace {

using namespace hdsse;

struct Setup {
  FeederModel model;
  ScenarioConfig config;
  Profiles profiles;
  GroundTruth truth;
  std::vector<TimestepData> data;
  std::vector<std::vector<AcSample>> samples;
  std::vector<AcModule> modules;
};

const Setup& setup() {
  static const Setup s = [] {
    Setup x;
    x.config.timesteps = 192;
    x.config.seed = 3;
    x.model = apply_metering(generate_feeder60(), x.config);
    x.profiles = generate_profiles(x.model, x.config);
    x.truth = generate_truth(x.model, x.profiles);
    x.data = synthesize_measurements(x.model, x.truth, x.config);
    x.samples = training_samples(x.model, x.truth, x.data);
    for (const auto& sc : x.model.secondaries()) x.modules.emplace_back(sc, AcConfig{}, 17 + sc.id);
    PretrainOptions opt;
    opt.epochs = 10;
    opt.logvar_epochs = opt.critic_epochs = 5;
#pragma omp parallel for schedule(dynamic)
    for (int k = 0; k < static_cast<int>(x.modules.size()); ++k) pretrain(x.modules[k], x.samples[k], opt);
    return x;
  }();
  return s;
}

void BM_TruthSerial(benchmark::State& st) {
  const Setup& s = setup();
  for (auto _ : st) benchmark::DoNotOptimize(generate_truth_serial(s.model, s.profiles));
}
void BM_TruthParallel(benchmark::State& st) {
  const Setup& s = setup();
  for (auto _ : st) benchmark::DoNotOptimize(generate_truth(s.model, s.profiles));
}

void stage_a(benchmark::State& st, bool parallel) {
  const Setup& s = setup();
  Hierarchy h(s.model, s.modules);
  h.config().parallel = parallel;
  std::size_t t = 0;
  for (auto _ : st) {
    benchmark::DoNotOptimize(h.run_timestep(s.data[t]));
    t = (t + 1) % s.data.size();
  }
}
void BM_StageASerialLayer2(benchmark::State& st) { stage_a(st, false); }
void BM_StageAParallelLayer2(benchmark::State& st) { stage_a(st, true); }

void pretrain_all(benchmark::State& st, bool parallel) {
  const Setup& s = setup();
  PretrainOptions opt;
  opt.epochs = 3;
  opt.logvar_epochs = opt.critic_epochs = 1;
  for (auto _ : st) {
    std::vector<AcModule> mods;
    for (const auto& sc : s.model.secondaries()) mods.emplace_back(sc, AcConfig{}, 17 + sc.id);
    const int n = static_cast<int>(mods.size());
    if (parallel) {
#pragma omp parallel for schedule(dynamic)
      for (int k = 0; k < n; ++k) pretrain(mods[k], s.samples[k], opt);
    } else {
      for (int k = 0; k < n; ++k) pretrain(mods[k], s.samples[k], opt);
    }
    benchmark::DoNotOptimize(mods.data());
  }
}
void BM_PretrainSerial(benchmark::State& st) { pretrain_all(st, false); }
void BM_PretrainParallel(benchmark::State& st) { pretrain_all(st, true); }

BENCHMARK(BM_TruthSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TruthParallel)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_StageASerialLayer2)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_StageAParallelLayer2)->Unit(benchmark::kMicrosecond)->UseRealTime();
BENCHMARK(BM_PretrainSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PretrainParallel)->Unit(benchmark::kMillisecond)->UseRealTime();

}  // namespace

int main(int argc, char** argv) {
  benchmark::Initialize(&argc, argv);
  benchmark::AddCustomContext("omp_max_threads", std::to_string(omp_get_max_threads()));
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
