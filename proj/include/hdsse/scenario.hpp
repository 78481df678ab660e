#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "hdsse/actor_critic.hpp"
#include "hdsse/grid_model.hpp"
#include "hdsse/powerflow.hpp"
#include "hdsse/state.hpp"

namespace hdsse {

struct ScenarioConfig {
  int timesteps = 96;
  std::uint64_t seed = 1;
  int start_step = 0;              // offset of t = 0 from midnight, in intervals
  double interval_h = 0.25;        // meter interval and timestep length
  double pv_penetration = 0.5;     // peak aggregate PV / peak aggregate load
  double meter_penetration = 0.1;  // fraction of customers with smart meters
  std::uint64_t meter_seed = 7;    // metering plan is nested across penetrations

  // Maximum relative error per sensor class (taken as 3 sigma).
  double max_error_scada_voltage = 0.03;
  double max_error_scada_power = 0.03;
  double max_error_meter_voltage = 0.03;
  double max_error_meter_energy = 0.03;

  // Load shape.
  double customer_scale_sigma = 0.3;  // lognormal spread of customer size
  double ar_coefficient = 0.9;
  double ar_sigma = 0.15;
  double power_factor_min = 0.9;
  double power_factor_max = 0.98;
  double pv_customer_fraction = 0.3;  // used by the feeder generator
  double cloud_sigma = 0.25;

  // Substation voltage.
  double root_voltage_mean = 1.025;
  double root_voltage_amplitude = 0.01;
  double root_voltage_noise = 0.002;
};

ScenarioConfig load_scenario_config(const std::filesystem::path& path);
ScenarioConfig parse_scenario_config(const std::string& json_text);
std::string format_scenario_config(const ScenarioConfig& config);

/// Customers in circuit order, then customer order within each circuit.
std::vector<NodeId> customer_nodes(const FeederModel& model);

/// Per-customer series, rows = customers (customer_nodes order), columns = timesteps.
/// Load convention: net injection is p - pv.
struct Profiles {
  Eigen::MatrixXd p;
  Eigen::MatrixXd q;
  Eigen::MatrixXd pv;
  Eigen::VectorXd root_voltage;  // per timestep
  int timesteps() const { return static_cast<int>(p.cols()); }
};

Profiles generate_profiles(const FeederModel& model, const ScenarioConfig& config);

struct GroundTruth {
  std::vector<std::vector<Complex>> voltages;  // [t][node]
  std::vector<StateVector> currents;           // [t], joint network
  std::vector<std::vector<PowerInjection>> injections;  // [t][node]
  int timesteps() const { return static_cast<int>(voltages.size()); }
};

/// Power flow per timestep over the joint network (parallel over timesteps).
GroundTruth generate_truth(const FeederModel& model, const Profiles& profiles,
                           const PowerFlowOptions& options = {1e-10, 100});
GroundTruth generate_truth_serial(const FeederModel& model, const Profiles& profiles,
                                  const PowerFlowOptions& options = {1e-10, 100});

/// Smart-meter owners: the first round(penetration * N) customers of a seeded permutation.
std::vector<NodeId> select_metered(const FeederModel& model, double penetration, std::uint64_t seed);
/// Model with meters installed per config.meter_penetration / meter_seed.
FeederModel apply_metering(const FeederModel& model, const ScenarioConfig& config);

struct ScadaReadings {
  double v_root = 1.0;    // |V| at the substation
  double p_supply = 0.0;  // power delivered into the feeder
  double q_supply = 0.0;
};

struct TimestepData {
  int t = 0;
  ScadaReadings scada;
  std::vector<AcInput> circuits;  // v_transformer left at 1 + 0j; layer 1 fills it
};

/// Truncated-Gaussian draw: sigma = max_error / 3, resampled outside +-max_error.
double truncated_gaussian(Rng& rng, double max_error);

/// Noisy readings for every timestep. Each timestep draws from its own
/// deterministic substream, so output is independent of evaluation order.
std::vector<TimestepData> synthesize_measurements(const FeederModel& model, const GroundTruth& truth,
                                                  const ScenarioConfig& config);

/// Layer-1 voltage stand-in for supervised labels: forward sweep of the true
/// primary currents from the measured substation voltage.
std::vector<Complex> oracle_transformer_voltages(const FeederModel& model, const GroundTruth& truth,
                                                 const TimestepData& data);

/// Per-circuit (input, true state) pairs for pretraining.
std::vector<std::vector<AcSample>> training_samples(const FeederModel& model, const GroundTruth& truth,
                                                    std::span<const TimestepData> data);

/// Restrict a joint-network current vector to one circuit / to the primary.
StateVector circuit_state(const SecondaryCircuit& circuit, const StateVector& joint);
StateVector primary_state(const FeederModel& model, const StateVector& joint);

/// Bundled synthetic test feeder: 60 primary nodes, 44 secondaries, 238 customers.
FeederModel generate_feeder60(std::uint64_t seed = 2024);
/// A primary-only random radial network with realistic per-unit impedances.
RadialNetwork generate_primary_case(int nodes, std::uint64_t seed);

}  // namespace hdsse
