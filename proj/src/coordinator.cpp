#include "hdsse/coordinator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "hdsse/errors.hpp"
#include "hdsse/powerflow.hpp"

namespace hdsse {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

double sensor_variance(double max_error, double magnitude, double floor_magnitude) {
  const double sigma = max_error * std::max(std::abs(magnitude), floor_magnitude) / 3.0;
  return sigma * sigma;
}

}  // namespace

std::string_view to_string(StageStatus s) {
  switch (s) {
    case StageStatus::Converged: return "converged";
    case StageStatus::IterationCap: return "iteration_cap";
    case StageStatus::Oscillation: return "oscillation";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Topology

std::vector<SwitchOp> parse_switch_ops(std::string_view text) {
  std::vector<SwitchOp> ops;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string verb;
    if (!(ls >> verb)) continue;
    SwitchOp op;
    if (verb == "open") {
      op.kind = SwitchOp::Kind::Open;
      if (!(ls >> op.branch.value)) throw ParseError("open needs: open <branch>", line_no);
    } else if (verb == "close") {
      op.kind = SwitchOp::Kind::Close;
      if (!(ls >> op.from.value >> op.to.value >> op.r >> op.x))
        throw ParseError("close needs: close <from> <to> <r> <x>", line_no);
    } else {
      throw ParseError(fmt::format("unknown switch operation '{}'", verb), line_no);
    }
    std::string extra;
    if (ls >> extra) throw ParseError(fmt::format("trailing field '{}'", extra), line_no);
    ops.push_back(op);
  }
  return ops;
}

std::vector<SwitchOp> load_switch_ops(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open {}", path.string()), 0);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_switch_ops(ss.str());
}

FeederModel apply_topology_change(const FeederModel& model, std::span<const SwitchOp> ops) {
  FeederDescription d = model.description();
  std::set<std::int32_t> freed;
  int next_id = model.branch_count();
  for (const SwitchOp& op : ops) {
    if (op.kind == SwitchOp::Kind::Open) {
      auto it = std::find_if(d.branches.begin(), d.branches.end(),
                             [&](const BranchRecord& b) { return b.id == op.branch; });
      if (it == d.branches.end())
        throw ValidationError(fmt::format("cannot open branch {}: not a primary branch", op.branch.value));
      d.branches.erase(it);
      freed.insert(op.branch.value);
    } else {
      for (NodeId n : {op.from, op.to})
        if (n.value < 0 || n.value >= model.node_count() || model.circuit_of(n) >= 0)
          throw ValidationError(fmt::format("cannot close onto node {}: not a primary node", n.value));
      BranchId id{next_id};
      if (!freed.empty()) {
        id = BranchId{*freed.begin()};
        freed.erase(freed.begin());
      } else {
        ++next_id;
      }
      d.branches.push_back({id, op.from, op.to, op.r, op.x});
    }
  }
  std::sort(d.branches.begin(), d.branches.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  try {
    return FeederModel::build(std::move(d));
  } catch (const ValidationError& e) {
    throw ValidationError(fmt::format("topology change rejected: {}", e.what()));
  }
}

// ---------------------------------------------------------------------------

Hierarchy::Hierarchy(FeederModel model, std::vector<AcModule> modules, HierarchyConfig config)
    : model_(std::move(model)), modules_(std::move(modules)), config_(std::move(config)) {
  if (modules_.size() != model_.secondaries().size())
    throw std::invalid_argument(fmt::format("{} modules for {} secondary circuits", modules_.size(),
                                            model_.secondaries().size()));
  for (std::size_t k = 0; k < modules_.size(); ++k)
    if (modules_[k].circuit().id != model_.secondaries()[k].id ||
        modules_[k].state_dim() != model_.secondaries()[k].state_dim())
      throw std::invalid_argument(fmt::format("module {} does not match circuit {}", k, model_.secondaries()[k].id));
  if (!(config_.epsilon_v > 0) || config_.max_iterations < 1)
    throw std::invalid_argument("hierarchy needs epsilon_v > 0 and max_iterations >= 1");
}

double Hierarchy::confidence_factor(std::size_t k) const {
  const AcModule& m = modules_.at(k);
  if (m.meter_count() == 0 || m.steps() == 0) return 1.0;
  return 1.0 + config_.kappa * m.tde_ema() / std::max(m.residual_ema(), config_.residual_floor);
}

void Hierarchy::reset_warm_start() {
  warm_ = false;
  last_boundary_.clear();
}

void Hierarchy::apply_topology_change(std::span<const SwitchOp> ops) {
  model_ = hdsse::apply_topology_change(model_, ops);
  // Primary branch numbering may have changed; keep only the boundary.
  warm_ = false;
}

std::vector<BoundaryUp> Hierarchy::cold_start_boundary(const TimestepData& data) const {
  std::vector<BoundaryUp> out;
  for (std::size_t k = 0; k < modules_.size(); ++k) {
    const auto& sc = modules_[k].circuit();
    const auto metered = modules_[k].metered();
    std::vector<bool> is_metered(sc.customers.size(), false);
    BoundaryUp b;
    for (std::size_t i = 0; i < metered.size(); ++i) {
      is_metered[metered[i]] = true;
      b.p += data.circuits.at(k).meter_energy.at(i) / modules_[k].config().meter_interval_h;
    }
    for (std::size_t c = 0; c < sc.customers.size(); ++c) {
      if (!is_metered[c]) b.p += sc.customers[c].nominal_p;
      b.q += sc.customers[c].nominal_q;
    }
    b.var_p = std::max(0.25 * b.p * b.p, 1e-4);
    b.var_q = std::max(0.25 * b.q * b.q, 1e-4);
    out.push_back(b);
  }
  return out;
}

std::vector<Measurement> Hierarchy::primary_measurements(const TimestepData& data,
                                                         std::span<const BoundaryUp> boundary) const {
  const PrimaryView& pv = model_.primary();
  const int root = pv.network.root().value;
  std::vector<Measurement> z;
  z.push_back({MeasurementKind::VoltageMagnitude, root, data.scada.v_root,
               sensor_variance(config_.max_error_scada_voltage, data.scada.v_root, 0.0)});
  z.push_back({MeasurementKind::PInjection, root, -data.scada.p_supply,
               sensor_variance(config_.max_error_scada_power, data.scada.p_supply, config_.scada_power_floor)});
  z.push_back({MeasurementKind::QInjection, root, -data.scada.q_supply,
               sensor_variance(config_.max_error_scada_power, data.scada.q_supply, config_.scada_power_floor)});
  for (std::size_t local = 0; local < pv.nodes.size(); ++local)
    if (model_.role(pv.nodes[local]) == NodeRole::PrimaryJunction) {
      z.push_back({MeasurementKind::PInjection, static_cast<int>(local), 0.0, config_.zero_injection_variance});
      z.push_back({MeasurementKind::QInjection, static_cast<int>(local), 0.0, config_.zero_injection_variance});
    }
  for (std::size_t k = 0; k < boundary.size(); ++k) {
    const int loc = pv.transformer_local[k].value;
    z.push_back({MeasurementKind::TransformerP, loc, boundary[k].p, boundary[k].var_p});
    z.push_back({MeasurementKind::TransformerQ, loc, boundary[k].q, boundary[k].var_q});
  }
  return z;
}

void Hierarchy::layer2(const TimestepData& data, std::span<const Complex> vt, std::vector<StateVector>& states,
                       std::vector<BoundaryUp>& boundary, bool parallel) const {
  const int n = static_cast<int>(modules_.size());
  states.resize(modules_.size());
  boundary.resize(modules_.size());
  auto one = [&](int k) {
    const auto i = static_cast<std::size_t>(k);
    const AcModule& m = modules_[i];
    AcInput input = data.circuits[i];
    input.v_transformer = vt[i];
    const PolicyOutput out = policy_eval(m.policy(), m.standardized(input));
    states[i] = StateVector(out.mean);
    BoundaryUp b = boundary_up(m, vt[i], states[i], out.variance);
    const double f = confidence_factor(i);
    b.var_p *= f;
    b.var_q *= f;
    boundary[i] = b;
  };
  if (parallel) {
#pragma omp parallel for schedule(static)
    for (int k = 0; k < n; ++k) one(k);
  } else {
    for (int k = 0; k < n; ++k) one(k);
  }
}

TimestepResult Hierarchy::run_timestep(const TimestepData& data) {
  const auto t0 = Clock::now();
  if (data.circuits.size() != modules_.size())
    throw DimensionError(fmt::format("timestep has {} circuit inputs for {} modules", data.circuits.size(),
                                     modules_.size()));
  const PrimaryView& pv = model_.primary();
  const Complex root_v(data.scada.v_root, 0.0);

  std::vector<BoundaryUp> boundary = warm_ && last_boundary_.size() == modules_.size()
                                         ? last_boundary_
                                         : cold_start_boundary(data);
  StateVector x0 = warm_ ? last_primary_ : StateVector::zeros(pv.network.branch_count());
  std::vector<Complex> v_prev;
  {
    const auto v0 = forward_sweep(pv.network, root_v, x0);
    for (NodeId local : pv.transformer_local) v_prev.push_back(v0[local.index()]);
  }

  TimestepResult res;
  TimestepResult best;
  double best_j = std::numeric_limits<double>::infinity();
  int rising = 0;
  for (int k = 1; k <= config_.max_iterations; ++k) {
    auto t1 = Clock::now();
    const auto z = primary_measurements(data, boundary);
    WlsSolution sol = wls_solve(pv.network, z, config_.wls, x0);
    res.timings.layer1_s += seconds_since(t1);

    std::vector<Complex> vt;
    double dv = 0.0;
    for (std::size_t i = 0; i < pv.transformer_local.size(); ++i) {
      vt.push_back(sol.voltages[pv.transformer_local[i].index()]);
      dv = std::max(dv, std::abs(vt.back() - v_prev[i]));
    }
    res.dv_history.push_back(dv);

    t1 = Clock::now();
    std::vector<StateVector> states;
    std::vector<BoundaryUp> next;
    layer2(data, vt, states, next, config_.parallel);
    res.timings.layer2_s += seconds_since(t1);

    res.iterations = k;
    x0 = sol.state;
    res.primary = std::move(sol);
    res.transformer_voltages = vt;
    res.secondary = std::move(states);
    res.boundary = next;
    boundary = std::move(next);
    v_prev = std::move(vt);

    if (res.primary.objective < best_j) {
      best_j = res.primary.objective;
      best = res;
    }
    if (dv < config_.epsilon_v) {
      res.status = StageStatus::Converged;
      break;
    }
    const auto& h = res.dv_history;
    rising = (h.size() >= 2 && h[h.size() - 1] >= h[h.size() - 2]) ? rising + 1 : 0;
    if (rising >= config_.oscillation_window) {
      auto history = res.dv_history;
      const int iters = res.iterations;
      res = std::move(best);
      res.dv_history = std::move(history);
      res.iterations = iters;
      res.status = StageStatus::Oscillation;
      break;
    }
    if (k == config_.max_iterations) res.status = StageStatus::IterationCap;
  }

  last_boundary_ = res.boundary;
  last_primary_ = res.primary.state;
  warm_ = true;
  res.timings.total_s = seconds_since(t0);
  return res;
}

std::vector<std::vector<TrainReport>> Hierarchy::run_offline_update(std::span<const TimestepData> stream) {
  std::vector<std::vector<TrainReport>> out;
  out.reserve(stream.size());
  for (const auto& data : stream) {
    const TimestepResult res = run_timestep(data);
    std::vector<TrainReport> reports(modules_.size());
    const int n = static_cast<int>(modules_.size());
#pragma omp parallel for schedule(dynamic)
    for (int k = 0; k < n; ++k) {
      const auto i = static_cast<std::size_t>(k);
      AcModule& m = modules_[i];
      if (m.meter_count() == 0) {
        reports[i].skipped = true;
        reports[i].residual = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      AcInput input = data.circuits[i];
      input.v_transformer = res.transformer_voltages[i];
      reports[i] = train_step(m, input);
      m.observe(reports[i], config_.ema_half_life);
    }
    out.push_back(std::move(reports));
  }
  return out;
}

JointEstimate Hierarchy::joint_estimate(const TimestepResult& r) const {
  JointEstimate e;
  e.voltages.assign(static_cast<std::size_t>(model_.node_count()), Complex(0.0, 0.0));
  e.currents = StateVector::zeros(model_.branch_count());
  const PrimaryView& pv = model_.primary();
  for (std::size_t l = 0; l < pv.nodes.size(); ++l) e.voltages[pv.nodes[l].index()] = r.primary.voltages[l];
  for (std::size_t b = 0; b < pv.branches.size(); ++b)
    e.currents.set_current(pv.branches[b], r.primary.state.current(BranchId{static_cast<int>(b)}));
  for (std::size_t k = 0; k < modules_.size(); ++k) {
    const SecondaryCircuit& sc = model_.secondaries()[k];
    const auto v = circuit_voltages(sc, r.transformer_voltages[k], r.secondary[k]);
    for (std::size_t l = 1; l < sc.nodes.size(); ++l) e.voltages[sc.nodes[l].index()] = v[l];
    for (std::size_t b = 0; b < sc.branches.size(); ++b)
      e.currents.set_current(sc.branches[b], r.secondary[k].current(BranchId{static_cast<int>(b)}));
  }
  return e;
}

}  // namespace hdsse
