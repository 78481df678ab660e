#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hdsse/actor_critic.hpp"
#include "hdsse/bench.hpp"
#include "hdsse/coordinator.hpp"
#include "hdsse/scenario.hpp"

namespace hdsse::cli {

namespace fs = std::filesystem;

struct CommonArgs {
  fs::path feeder;
  fs::path scenario;      // optional JSON config
  fs::path checkpoints;
  fs::path out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<int> timesteps;
  std::optional<double> meter_penetration;
  std::optional<double> pv_penetration;
  int threads = 0;  // 0 keeps the OpenMP default
};

/// Scenario defaults, then the JSON file, then explicit flags.
ScenarioConfig resolve_scenario(const CommonArgs& args);

/// Untrained modules, one per transformer, seeded from the scenario seed.
std::vector<AcModule> fresh_modules(const FeederModel& model, const AcConfig& ac, std::uint64_t seed);

struct TrainArgs {
  CommonArgs common;
  int online_steps = -1;  // -1: whole stream, 0: pretraining only
  PretrainOptions pretrain;
  AcConfig ac;
};

struct TrainResult {
  std::vector<PretrainReport> pretrain;
  std::vector<std::vector<TrainReport>> online;  // [step][module]
};

/// Pretrains one module per transformer on a generated stream, runs the online
/// update over it and (when checkpoints is set) writes the checkpoint directory.
TrainResult cmd_train(const TrainArgs& args, Hierarchy* trained = nullptr);

/// Loads a checkpoint directory written by cmd_train.
Hierarchy load_checkpoints(const fs::path& dir, const FeederModel& base, ScenarioConfig* scenario = nullptr);

struct EvalStream {
  FeederModel model;
  ScenarioConfig config;
  GroundTruth truth;
  std::vector<TimestepData> data;
};
EvalStream make_stream(const FeederModel& model, const ScenarioConfig& config);

BenchReport cmd_estimate(const CommonArgs& args);
BenchReport cmd_bench(const CommonArgs& args, const BenchOptions& options);

struct SweepRow {
  double meter_penetration = 0.0;
  int metered = 0;
  double voltage_mape = 0.0;
  double voltage_mape_se = 0.0;  // standard error over timesteps
  double angle_mae_rad = 0.0;
  double current_mape = 0.0;
  double converged_fraction = 0.0;
};
std::vector<SweepRow> cmd_sweep(const TrainArgs& train, const CommonArgs& eval, std::vector<double> penetrations);

struct TopologyReport {
  BenchReport before;
  BenchReport after;
};
TopologyReport cmd_topology(const CommonArgs& args, const fs::path& switch_file);

void cmd_gen_feeder(const fs::path& out, std::uint64_t seed);

int run(int argc, char** argv);

}  // namespace hdsse::cli
