#include "hdsse/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

#include "hdsse/errors.hpp"

namespace hdsse {

namespace {

using Clock = std::chrono::steady_clock;

double sigma2(double max_error, double magnitude, double floor_magnitude) {
  const double s = max_error * std::max(std::abs(magnitude), floor_magnitude) / 3.0;
  return s * s;
}

}  // namespace

// ---------------------------------------------------------------------------

void AccuracyAccumulator::add(std::span<const Complex> est_v, std::span<const Complex> true_v,
                              const StateVector& est_i, const StateVector& true_i) {
  if (est_v.size() != true_v.size() || est_i.values.size() != true_i.values.size())
    throw DimensionError("estimate and truth differ in size");
  double step_sum = 0.0;
  std::size_t step_n = 0;
  for (std::size_t n = 0; n < true_v.size(); ++n) {
    const double vt = std::abs(true_v[n]);
    if (vt >= guard_) {
      const double ape = std::abs(vt - std::abs(est_v[n])) / vt * 100.0;
      v_ape_sum_ += ape;
      step_sum += ape;
      ++v_n_;
      ++step_n;
    }
    const double at = std::arg(true_v[n]);
    const double ae = std::arg(est_v[n]);
    a_abs_sum_ += std::abs(at - ae);
    ++a_abs_n_;
    if (std::abs(at) >= guard_) {
      a_ape_sum_ += std::abs(at - ae) / std::abs(at) * 100.0;
      ++a_n_;
    } else {
      ++angle_excluded_;
    }
  }
  for (Eigen::Index i = 0; i < true_i.values.size(); ++i) {
    const double it = true_i.values[i];
    if (std::abs(it) >= guard_) {
      i_ape_sum_ += std::abs(it - est_i.values[i]) / std::abs(it) * 100.0;
      ++i_n_;
    } else {
      ++current_excluded_;
    }
  }
  per_step_voltage_mape_.push_back(step_n ? step_sum / static_cast<double>(step_n) : 0.0);
}

double AccuracyAccumulator::voltage_mape() const { return v_n_ ? v_ape_sum_ / static_cast<double>(v_n_) : 0.0; }
double AccuracyAccumulator::angle_mape() const { return a_n_ ? a_ape_sum_ / static_cast<double>(a_n_) : 0.0; }
double AccuracyAccumulator::angle_mae_rad() const {
  return a_abs_n_ ? a_abs_sum_ / static_cast<double>(a_abs_n_) : 0.0;
}
double AccuracyAccumulator::current_mape() const { return i_n_ ? i_ape_sum_ / static_cast<double>(i_n_) : 0.0; }

// ---------------------------------------------------------------------------

std::vector<Measurement> monolithic_measurements(const FeederModel& model, const TimestepData& data,
                                                 const MonolithicConfig& cfg) {
  const auto secondaries = model.secondaries();
  if (data.circuits.size() != secondaries.size())
    throw DimensionError(fmt::format("timestep has {} circuit inputs for {} circuits", data.circuits.size(),
                                     secondaries.size()));
  const int root = model.root().value;
  std::vector<Measurement> z;
  z.push_back({MeasurementKind::VoltageMagnitude, root, data.scada.v_root,
               sigma2(cfg.max_error_scada_voltage, data.scada.v_root, 0.0)});
  z.push_back({MeasurementKind::PInjection, root, -data.scada.p_supply,
               sigma2(cfg.max_error_scada_power, data.scada.p_supply, cfg.scada_power_floor)});
  z.push_back({MeasurementKind::QInjection, root, -data.scada.q_supply,
               sigma2(cfg.max_error_scada_power, data.scada.q_supply, cfg.scada_power_floor)});

  std::vector<bool> is_customer(static_cast<std::size_t>(model.node_count()), false);
  for (std::size_t k = 0; k < secondaries.size(); ++k) {
    const SecondaryCircuit& sc = secondaries[k];
    const auto metered = sc.metered_customers();
    const AcInput& in = data.circuits[k];
    if (in.meter_voltage.size() != metered.size() || in.meter_energy.size() != metered.size())
      throw DimensionError(fmt::format("circuit {} expects {} meter readings", sc.id, metered.size()));
    std::vector<int> meter_slot(sc.customers.size(), -1);
    for (std::size_t i = 0; i < metered.size(); ++i) meter_slot[metered[i]] = static_cast<int>(i);
    for (std::size_t c = 0; c < sc.customers.size(); ++c) {
      const CustomerRecord& cust = sc.customers[c];
      const int node = cust.node.value;
      is_customer[cust.node.index()] = true;
      const double q_sigma = cfg.pseudo_q_error_fraction * std::max(std::abs(cust.nominal_q), 1e-4);
      if (const int slot = meter_slot[c]; slot >= 0) {
        const double p = in.meter_energy[static_cast<std::size_t>(slot)] / cfg.meter_interval_h;
        const double v = in.meter_voltage[static_cast<std::size_t>(slot)];
        z.push_back({MeasurementKind::PInjection, node, p, sigma2(cfg.max_error_meter_energy, p, 1e-3)});
        z.push_back({MeasurementKind::VoltageMagnitude, node, v, sigma2(cfg.max_error_meter_voltage, v, 0.0)});
      } else {
        const double p_sigma = cfg.pseudo_error_fraction * std::max(std::abs(cust.nominal_p), 1e-4);
        z.push_back({MeasurementKind::PInjection, node, cust.nominal_p, p_sigma * p_sigma});
      }
      z.push_back({MeasurementKind::QInjection, node, cust.nominal_q, q_sigma * q_sigma});
    }
  }
  for (int n = 0; n < model.node_count(); ++n) {
    if (n == root || is_customer[static_cast<std::size_t>(n)]) continue;
    z.push_back({MeasurementKind::PInjection, n, 0.0, cfg.zero_injection_variance});
    z.push_back({MeasurementKind::QInjection, n, 0.0, cfg.zero_injection_variance});
  }
  return z;
}

MonolithicResult monolithic_estimate(const FeederModel& model, const TimestepData& data,
                                     const MonolithicConfig& config, const StateVector& x0) {
  const auto start = Clock::now();
  MonolithicResult r;
  const auto z = monolithic_measurements(model, data, config);
  r.solution = wls_solve(model.network(), z, config.wls, x0);
  r.seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return r;
}

// ---------------------------------------------------------------------------

SampleStats summarize(std::vector<double> s) {
  SampleStats out;
  out.count = s.size();
  if (s.empty()) return out;
  std::sort(s.begin(), s.end());
  out.mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
  const std::size_t mid = s.size() / 2;
  out.median = s.size() % 2 ? s[mid] : 0.5 * (s[mid - 1] + s[mid]);
  out.p95 = s[std::min(s.size() - 1, static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(s.size()))) - 1)];
  out.max = s.back();
  return out;
}

double BenchReport::speedup() const {
  if (monolithic_s.empty() || pipeline_s.empty()) return 0.0;
  return summarize(monolithic_s).median / summarize(pipeline_s).median;
}

std::vector<double> time_module_inference(const Hierarchy& hierarchy, std::span<const TimestepData> stream,
                                          int repetitions) {
  std::vector<double> out;
  const auto modules = hierarchy.modules();
  if (modules.empty() || stream.empty()) return out;
  out.reserve(static_cast<std::size_t>(std::max(repetitions, 0)));
  volatile double sink = 0.0;
  for (int i = 0; i < repetitions; ++i) {
    const auto k = static_cast<std::size_t>(i) % modules.size();
    const auto t = (static_cast<std::size_t>(i) / modules.size()) % stream.size();
    const auto start = Clock::now();
    const StateVector s = infer_mean(modules[k], stream[t].circuits[k]);
    const BoundaryUp b = boundary_up(modules[k], stream[t].circuits[k], s);
    out.push_back(std::chrono::duration<double>(Clock::now() - start).count());
    sink = sink + b.p;
  }
  return out;
}

BenchReport run_bench(Hierarchy& hierarchy, std::span<const TimestepData> stream, const GroundTruth& truth,
                      const BenchOptions& options, const MonolithicConfig& mono) {
  if (static_cast<int>(stream.size()) > truth.timesteps())
    throw std::invalid_argument("stream is longer than the ground truth");
  BenchReport rep;
  const FeederModel& model = hierarchy.model();
  for (std::size_t t = 0; t < stream.size(); ++t) {
    const TimestepResult r = hierarchy.run_timestep(stream[t]);
    const JointEstimate est = hierarchy.joint_estimate(r);
    rep.hierarchy.add(est.voltages, truth.voltages[t], est.currents, truth.currents[t]);
    TimestepRecord rec;
    rec.t = stream[t].t;
    rec.iterations = r.iterations;
    rec.status = r.status;
    rec.voltage_mape = rep.hierarchy.per_step_voltage_mape().back();
    rec.final_dv = r.dv_history.empty() ? 0.0 : r.dv_history.back();
    rep.records.push_back(rec);
    if (r.status == StageStatus::Converged && r.iterations <= 10) ++rep.converged_within_10;
    rep.pipeline_s.push_back(r.timings.total_s);
    rep.layer1_s.push_back(r.timings.layer1_s);
    rep.layer2_s.push_back(r.timings.layer2_s);
  }
  if (options.run_monolithic) {
    const auto n = std::min(stream.size(), static_cast<std::size_t>(std::max(options.monolithic_timesteps, 0)));
    StateVector x0 = StateVector::zeros(model.branch_count());
    for (std::size_t t = 0; t < n; ++t) {
      const MonolithicResult m = monolithic_estimate(model, stream[t], mono, x0);
      rep.monolithic_s.push_back(m.seconds);
      rep.monolithic.add(m.solution.voltages, truth.voltages[t], m.solution.state, truth.currents[t]);
      x0 = m.solution.state;
    }
  }
  rep.inference_s = time_module_inference(hierarchy, stream, options.inference_repetitions);
  return rep;
}

}  // namespace hdsse
