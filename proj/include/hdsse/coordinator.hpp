#pragma once

#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "hdsse/actor_critic.hpp"
#include "hdsse/grid_model.hpp"
#include "hdsse/scenario.hpp"
#include "hdsse/wls_bcse.hpp"

namespace hdsse {

struct HierarchyConfig {
  int max_iterations = 20;
  double epsilon_v = 1e-4;          // boundary voltage stabilization tolerance, p.u.
  double kappa = 1.0;               // TDE confidence mixing factor
  double ema_half_life = 20.0;      // training steps
  double residual_floor = 1e-8;
  int oscillation_window = 3;       // non-decreasing |dV| iterations before fallback
  double zero_injection_variance = 1e-8;
  double max_error_scada_voltage = 0.03;
  double max_error_scada_power = 0.03;
  double scada_power_floor = 0.01;  // p.u., keeps tiny flows from dominating
  bool parallel = true;             // layer-2 inference across modules
  WlsConfig wls;
};

enum class StageStatus { Converged, IterationCap, Oscillation };
std::string_view to_string(StageStatus status);

struct StageTimings {
  double layer1_s = 0.0;
  double layer2_s = 0.0;
  double total_s = 0.0;
};

struct TimestepResult {
  WlsSolution primary;
  std::vector<Complex> transformer_voltages;  // per circuit
  std::vector<StateVector> secondary;         // per circuit, local branch order
  std::vector<BoundaryUp> boundary;           // per circuit, after confidence weighting
  int iterations = 0;
  StageStatus status = StageStatus::Converged;
  std::vector<double> dv_history;  // max |dV_n| per Stage-A iteration
  StageTimings timings;
};

/// Voltages and currents of the joint network in global numbering.
struct JointEstimate {
  std::vector<Complex> voltages;
  StateVector currents;
};

struct SwitchOp {
  enum class Kind { Open, Close } kind = Kind::Open;
  BranchId branch;   // Open
  NodeId from, to;   // Close
  double r = 0.0, x = 0.0;
};

std::vector<SwitchOp> parse_switch_ops(std::string_view text);
std::vector<SwitchOp> load_switch_ops(const std::filesystem::path& path);
/// New model with primary branches opened/closed. Opened ids are reused by
/// closed branches. Throws ValidationError if the result is not a spanning tree.
FeederModel apply_topology_change(const FeederModel& model, std::span<const SwitchOp> ops);

class Hierarchy {
 public:
  Hierarchy(FeederModel model, std::vector<AcModule> modules, HierarchyConfig config = {});

  const FeederModel& model() const { return model_; }
  std::span<AcModule> modules() { return modules_; }
  std::span<const AcModule> modules() const { return modules_; }
  const HierarchyConfig& config() const { return config_; }
  HierarchyConfig& config() { return config_; }

  /// Stage A for one timestep; updates the warm start.
  TimestepResult run_timestep(const TimestepData& data);
  /// Stage A then one train_step per metered module, for each timestep in order.
  /// Result is [timestep][module]; modules without meters report skipped.
  std::vector<std::vector<TrainReport>> run_offline_update(std::span<const TimestepData> stream);

  /// Swap primary topology; modules are kept as they are.
  void apply_topology_change(std::span<const SwitchOp> ops);

  /// Variance multiplier for module k's boundary pseudo-measurements (>= 1).
  double confidence_factor(std::size_t k) const;
  void reset_warm_start();

  std::vector<Measurement> primary_measurements(const TimestepData& data,
                                                std::span<const BoundaryUp> boundary) const;
  /// Initial boundary injections: metered average power plus nominal demand of the rest.
  std::vector<BoundaryUp> cold_start_boundary(const TimestepData& data) const;
  JointEstimate joint_estimate(const TimestepResult& result) const;

 private:
  void layer2(const TimestepData& data, std::span<const Complex> vt, std::vector<StateVector>& states,
              std::vector<BoundaryUp>& boundary, bool parallel) const;

  FeederModel model_;
  std::vector<AcModule> modules_;
  HierarchyConfig config_;
  std::vector<BoundaryUp> last_boundary_;
  StateVector last_primary_;
  bool warm_ = false;
};

}  // namespace hdsse
