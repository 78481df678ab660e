#pragma once

#include <span>
#include <string>
#include <vector>

#include "hdsse/coordinator.hpp"
#include "hdsse/scenario.hpp"
#include "hdsse/wls_bcse.hpp"

namespace hdsse {

/// Accuracy of one method against ground truth, accumulated over timesteps.
class AccuracyAccumulator {
 public:
  explicit AccuracyAccumulator(double guard = 1e-9) : guard_(guard) {}

  /// Node voltages and branch currents in global numbering.
  void add(std::span<const Complex> est_v, std::span<const Complex> true_v, const StateVector& est_i,
           const StateVector& true_i);

  double voltage_mape() const;
  double angle_mape() const;       // nodes with |true angle| >= guard
  double angle_mae_rad() const;
  double current_mape() const;     // entries with |true| >= guard
  std::size_t samples() const { return per_step_voltage_mape_.size(); }
  std::size_t angle_excluded() const { return angle_excluded_; }
  std::size_t current_excluded() const { return current_excluded_; }
  std::span<const double> per_step_voltage_mape() const { return per_step_voltage_mape_; }

 private:
  double guard_;
  double v_ape_sum_ = 0.0, a_ape_sum_ = 0.0, a_abs_sum_ = 0.0, i_ape_sum_ = 0.0;
  std::size_t v_n_ = 0, a_n_ = 0, a_abs_n_ = 0, i_n_ = 0;
  std::size_t angle_excluded_ = 0, current_excluded_ = 0;
  std::vector<double> per_step_voltage_mape_;
};

struct MonolithicConfig {
  double pseudo_error_fraction = 0.5;  // 1 sigma of unmetered customer pseudo-loads
  double pseudo_q_error_fraction = 0.5;
  double zero_injection_variance = 1e-8;
  double max_error_scada_voltage = 0.03;
  double max_error_scada_power = 0.03;
  double max_error_meter_voltage = 0.03;
  double max_error_meter_energy = 0.03;
  double scada_power_floor = 0.01;
  double meter_interval_h = 0.25;
  WlsConfig wls;
};

/// Measurement set for a single WLS over the joint primary + secondary network
/// (global node numbering): SCADA at the root, zero injections at every
/// passive node, meter |V| and P at metered customers, pseudo-loads elsewhere.
std::vector<Measurement> monolithic_measurements(const FeederModel& model, const TimestepData& data,
                                                 const MonolithicConfig& config = {});

struct MonolithicResult {
  WlsSolution solution;
  double seconds = 0.0;
};

MonolithicResult monolithic_estimate(const FeederModel& model, const TimestepData& data,
                                     const MonolithicConfig& config, const StateVector& x0);

struct SampleStats {
  std::size_t count = 0;
  double mean = 0.0;
  double median = 0.0;
  double p95 = 0.0;
  double max = 0.0;
};
SampleStats summarize(std::vector<double> samples);

struct BenchOptions {
  int monolithic_timesteps = 20;       // timesteps also solved by the joint WLS
  int inference_repetitions = 3500;    // timed single-module inference calls
  bool run_monolithic = true;
};

struct TimestepRecord {
  int t = 0;
  int iterations = 0;
  StageStatus status = StageStatus::Converged;
  double voltage_mape = 0.0;
  double final_dv = 0.0;
};

struct BenchReport {
  AccuracyAccumulator hierarchy{};
  AccuracyAccumulator monolithic{};
  std::vector<TimestepRecord> records;
  std::size_t converged_within_10 = 0;  // Converged status and <= 10 Stage-A iterations

  std::vector<double> pipeline_s;    // per timestep
  std::vector<double> layer1_s;
  std::vector<double> layer2_s;
  std::vector<double> inference_s;   // per single-module call
  std::vector<double> monolithic_s;  // per timestep

  double converged_fraction() const {
    return records.empty() ? 0.0 : static_cast<double>(converged_within_10) / static_cast<double>(records.size());
  }
  /// Median joint-WLS time over median pipeline time (0 when not measured).
  double speedup() const;
};

/// Runs the hierarchy over a stream, scores it against truth and optionally
/// times the monolithic baseline on the first timesteps.
BenchReport run_bench(Hierarchy& hierarchy, std::span<const TimestepData> stream, const GroundTruth& truth,
                      const BenchOptions& options = {}, const MonolithicConfig& mono = {});

/// Wall time of `repetitions` single-module inference calls (mean mode plus
/// boundary powers), cycling through modules and timesteps.
std::vector<double> time_module_inference(const Hierarchy& hierarchy, std::span<const TimestepData> stream,
                                          int repetitions);

}  // namespace hdsse
