#include "hdsse/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "hdsse/errors.hpp"

namespace hdsse {

namespace {

// Substream for (seed, salt, index); independent of evaluation order.
Rng substream(std::uint64_t seed, std::uint64_t salt, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

enum Salt : std::uint64_t { kCustomer = 1, kWeather = 2, kRoot = 3, kMeasure = 4, kMeterPlan = 5 };

double hour_of(const ScenarioConfig& c, int t) {
  return std::fmod((c.start_step + t) * c.interval_h, 24.0);
}

double load_template(double h) {
  auto bump = [](double x, double mu, double s) { return std::exp(-0.5 * (x - mu) * (x - mu) / (s * s)); };
  // Morning and evening peaks over a base; evaluated on a periodic day.
  double v = 0.35;
  for (double shift : {-24.0, 0.0, 24.0}) v += 0.45 * bump(h + shift, 7.5, 1.5) + 0.8 * bump(h + shift, 19.0, 2.0);
  return v;
}

double template_mean() {
  static const double mean = [] {
    double s = 0.0;
    const int n = 24 * 60;
    for (int i = 0; i < n; ++i) s += load_template(24.0 * i / n);
    return s / n;
  }();
  return mean;
}

double clear_sky(double h) { return (h > 6.0 && h < 18.0) ? std::sin(std::numbers::pi * (h - 6.0) / 12.0) : 0.0; }

void validate(const ScenarioConfig& c) {
  auto unit = [](double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(fmt::format("{} must lie in [0, 1], got {}", what, v));
  };
  if (c.timesteps < 1) throw ValidationError("timesteps must be at least 1");
  if (!(c.interval_h > 0)) throw ValidationError("interval_h must be positive");
  unit(c.pv_penetration, "pv_penetration");
  unit(c.meter_penetration, "meter_penetration");
  for (double e : {c.max_error_scada_voltage, c.max_error_scada_power, c.max_error_meter_voltage,
                   c.max_error_meter_energy})
    if (!(e >= 0.0 && e < 1.0)) throw ValidationError(fmt::format("max error must lie in [0, 1), got {}", e));
  if (!(c.power_factor_min > 0 && c.power_factor_min <= c.power_factor_max && c.power_factor_max <= 1.0))
    throw ValidationError("power factor range must satisfy 0 < min <= max <= 1");
  if (!(std::abs(c.ar_coefficient) < 1.0)) throw ValidationError("ar_coefficient must lie in (-1, 1)");
}

template <typename Fn>
void parallel_for(int n, Fn&& fn) {
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    try {
      fn(i);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

ScenarioConfig parse_scenario_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("scenario config: ") + e.what(), 0);
  }
  if (!j.is_object()) throw ParseError("scenario config must be a JSON object", 0);
  ScenarioConfig c;
  for (auto& [key, value] : j.items()) {
    try {
      if (key == "timesteps") c.timesteps = value.get<int>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "start_step") c.start_step = value.get<int>();
      else if (key == "interval_h") c.interval_h = value.get<double>();
      else if (key == "pv_penetration") c.pv_penetration = value.get<double>();
      else if (key == "meter_penetration") c.meter_penetration = value.get<double>();
      else if (key == "meter_seed") c.meter_seed = value.get<std::uint64_t>();
      else if (key == "max_error_scada_voltage") c.max_error_scada_voltage = value.get<double>();
      else if (key == "max_error_scada_power") c.max_error_scada_power = value.get<double>();
      else if (key == "max_error_meter_voltage") c.max_error_meter_voltage = value.get<double>();
      else if (key == "max_error_meter_energy") c.max_error_meter_energy = value.get<double>();
      else if (key == "customer_scale_sigma") c.customer_scale_sigma = value.get<double>();
      else if (key == "ar_coefficient") c.ar_coefficient = value.get<double>();
      else if (key == "ar_sigma") c.ar_sigma = value.get<double>();
      else if (key == "power_factor_min") c.power_factor_min = value.get<double>();
      else if (key == "power_factor_max") c.power_factor_max = value.get<double>();
      else if (key == "pv_customer_fraction") c.pv_customer_fraction = value.get<double>();
      else if (key == "cloud_sigma") c.cloud_sigma = value.get<double>();
      else if (key == "root_voltage_mean") c.root_voltage_mean = value.get<double>();
      else if (key == "root_voltage_amplitude") c.root_voltage_amplitude = value.get<double>();
      else if (key == "root_voltage_noise") c.root_voltage_noise = value.get<double>();
      else throw ParseError(fmt::format("unknown scenario key '{}'", key), 0);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(fmt::format("scenario key '{}': {}", key, e.what()), 0);
    }
  }
  validate(c);
  return c;
}

ScenarioConfig load_scenario_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open {}", path.string()), 0);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario_config(ss.str());
}

std::string format_scenario_config(const ScenarioConfig& c) {
  nlohmann::ordered_json j;
  j["timesteps"] = c.timesteps;
  j["seed"] = c.seed;
  j["start_step"] = c.start_step;
  j["interval_h"] = c.interval_h;
  j["pv_penetration"] = c.pv_penetration;
  j["meter_penetration"] = c.meter_penetration;
  j["meter_seed"] = c.meter_seed;
  j["max_error_scada_voltage"] = c.max_error_scada_voltage;
  j["max_error_scada_power"] = c.max_error_scada_power;
  j["max_error_meter_voltage"] = c.max_error_meter_voltage;
  j["max_error_meter_energy"] = c.max_error_meter_energy;
  j["customer_scale_sigma"] = c.customer_scale_sigma;
  j["ar_coefficient"] = c.ar_coefficient;
  j["ar_sigma"] = c.ar_sigma;
  j["power_factor_min"] = c.power_factor_min;
  j["power_factor_max"] = c.power_factor_max;
  j["pv_customer_fraction"] = c.pv_customer_fraction;
  j["cloud_sigma"] = c.cloud_sigma;
  j["root_voltage_mean"] = c.root_voltage_mean;
  j["root_voltage_amplitude"] = c.root_voltage_amplitude;
  j["root_voltage_noise"] = c.root_voltage_noise;
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Profiles

std::vector<NodeId> customer_nodes(const FeederModel& model) {
  std::vector<NodeId> out;
  for (const auto& sc : model.secondaries())
    for (const auto& c : sc.customers) out.push_back(c.node);
  return out;
}

Profiles generate_profiles(const FeederModel& model, const ScenarioConfig& config) {
  validate(config);
  std::vector<CustomerRecord> customers;
  for (const auto& sc : model.secondaries())
    for (const auto& c : sc.customers) customers.push_back(c);
  const int n = static_cast<int>(customers.size());
  const int steps = config.timesteps;
  Profiles pr;
  pr.p = Eigen::MatrixXd::Zero(n, steps);
  pr.q = Eigen::MatrixXd::Zero(n, steps);
  pr.pv = Eigen::MatrixXd::Zero(n, steps);
  pr.root_voltage = Eigen::VectorXd::Zero(steps);

  const double tmean = template_mean();
  const double phi = config.ar_coefficient;
  const double s = config.ar_sigma;
  parallel_for(n, [&](int i) {
    Rng rng = substream(config.seed, kCustomer, static_cast<std::uint64_t>(i));
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> pf_dist(config.power_factor_min, config.power_factor_max);
    std::uniform_real_distribution<double> cap_dist(0.8, 1.2);
    const double pf = pf_dist(rng);
    const double tan_phi = std::tan(std::acos(pf));
    const double cap = cap_dist(rng);
    double a = s * normal(rng);
    for (int t = 0; t < steps; ++t) {
      if (t > 0) a = phi * a + s * std::sqrt(1.0 - phi * phi) * normal(rng);
      const double h = hour_of(config, t);
      const double p = customers[static_cast<std::size_t>(i)].nominal_p * load_template(h) / tmean *
                       std::exp(a - 0.5 * s * s);
      pr.p(i, t) = p;
      pr.q(i, t) = p * tan_phi;
      if (customers[static_cast<std::size_t>(i)].has_pv) pr.pv(i, t) = cap * clear_sky(hour_of(config, t));
    }
  });

  // Shared weather: cloud attenuation and substation voltage.
  Rng weather = substream(config.seed, kWeather, 0);
  Rng root = substream(config.seed, kRoot, 0);
  std::normal_distribution<double> normal;
  double cloud = 0.0, vnoise = 0.0;
  for (int t = 0; t < steps; ++t) {
    cloud = 0.95 * cloud + std::sqrt(1.0 - 0.95 * 0.95) * normal(weather);
    const double atten = std::clamp(1.0 - config.cloud_sigma * std::abs(cloud), 0.2, 1.0);
    pr.pv.col(t) *= atten;
    vnoise = 0.9 * vnoise + config.root_voltage_noise * std::sqrt(1.0 - 0.81) * normal(root);
    const double h = hour_of(config, t);
    pr.root_voltage[t] = std::clamp(
        config.root_voltage_mean + config.root_voltage_amplitude * std::sin(2.0 * std::numbers::pi * (h - 9.0) / 24.0) + vnoise,
        1.0, 1.05);
  }

  const double pv_peak = pr.pv.colwise().sum().maxCoeff();
  const double load_peak = pr.p.colwise().sum().maxCoeff();
  if (pv_peak > 0.0 && config.pv_penetration > 0.0) pr.pv *= config.pv_penetration * load_peak / pv_peak;
  else pr.pv.setZero();
  return pr;
}

// ---------------------------------------------------------------------------
// Truth

namespace {

std::vector<PowerInjection> injections_at(const FeederModel& model, const Profiles& pr, int t) {
  std::vector<PowerInjection> inj(static_cast<std::size_t>(model.node_count()));
  int i = 0;
  for (const auto& sc : model.secondaries())
    for (const auto& c : sc.customers) {
      inj[c.node.index()] = {pr.p(i, t) - pr.pv(i, t), pr.q(i, t)};
      ++i;
    }
  return inj;
}

void solve_one(const FeederModel& model, const Profiles& pr, const PowerFlowOptions& opt, int t,
               GroundTruth& out) {
  auto inj = injections_at(model, pr, t);
  PowerFlowResult res;
  try {
    res = solve_powerflow(model.network(), inj, Complex(pr.root_voltage[t], 0.0), opt);
  } catch (const ConvergenceError& e) {
    throw ConvergenceError(fmt::format("timestep {}: {}", t, e.what()), e.iterations());
  }
  const auto k = static_cast<std::size_t>(t);
  out.voltages[k] = std::move(res.voltages);
  out.currents[k] = std::move(res.currents);
  out.injections[k] = std::move(inj);
}

GroundTruth allocate(const Profiles& pr) {
  GroundTruth g;
  const auto n = static_cast<std::size_t>(pr.timesteps());
  g.voltages.resize(n);
  g.currents.resize(n);
  g.injections.resize(n);
  return g;
}

}  // namespace

GroundTruth generate_truth(const FeederModel& model, const Profiles& profiles, const PowerFlowOptions& options) {
  GroundTruth g = allocate(profiles);
  parallel_for(profiles.timesteps(), [&](int t) { solve_one(model, profiles, options, t, g); });
  return g;
}

GroundTruth generate_truth_serial(const FeederModel& model, const Profiles& profiles,
                                  const PowerFlowOptions& options) {
  GroundTruth g = allocate(profiles);
  for (int t = 0; t < profiles.timesteps(); ++t) solve_one(model, profiles, options, t, g);
  return g;
}

// ---------------------------------------------------------------------------
// Metering and measurements

std::vector<NodeId> select_metered(const FeederModel& model, double penetration, std::uint64_t seed) {
  if (!(penetration >= 0.0 && penetration <= 1.0))
    throw std::invalid_argument(fmt::format("meter penetration must lie in [0, 1], got {}", penetration));
  auto nodes = customer_nodes(model);
  Rng rng = substream(seed, kMeterPlan, 0);
  std::shuffle(nodes.begin(), nodes.end(), rng);
  // Round half up: 0.1 x 238 = 23.8 -> 24.
  const auto count = static_cast<std::size_t>(std::floor(penetration * static_cast<double>(nodes.size()) + 0.5));
  nodes.resize(std::min(count, nodes.size()));
  std::sort(nodes.begin(), nodes.end());
  return nodes;
}

FeederModel apply_metering(const FeederModel& model, const ScenarioConfig& config) {
  const auto metered = select_metered(model, config.meter_penetration, config.meter_seed);
  return with_metering(model, metered);
}

double truncated_gaussian(Rng& rng, double max_error) {
  if (!(max_error > 0.0)) return 0.0;
  std::normal_distribution<double> normal(0.0, max_error / 3.0);
  for (;;) {
    const double e = normal(rng);
    if (std::abs(e) <= max_error) return e;
  }
}

std::vector<TimestepData> synthesize_measurements(const FeederModel& model, const GroundTruth& truth,
                                                  const ScenarioConfig& config) {
  validate(config);
  const int steps = truth.timesteps();
  std::vector<TimestepData> out(static_cast<std::size_t>(steps));
  const auto& net = model.network();
  const NodeId root = net.root();
  parallel_for(steps, [&](int t) {
    const auto k = static_cast<std::size_t>(t);
    Rng rng = substream(config.seed, kMeasure, k);
    const auto& v = truth.voltages[k];
    const auto& x = truth.currents[k];
    TimestepData& d = out[k];
    d.t = t;
    Complex out_current = 0.0;
    for (BranchId b : net.child_branches(root)) out_current += x.current(b);
    const Complex s_supply = v[root.index()] * std::conj(out_current);
    d.scada.v_root = std::abs(v[root.index()]) * (1.0 + truncated_gaussian(rng, config.max_error_scada_voltage));
    d.scada.p_supply = s_supply.real() * (1.0 + truncated_gaussian(rng, config.max_error_scada_power));
    d.scada.q_supply = s_supply.imag() * (1.0 + truncated_gaussian(rng, config.max_error_scada_power));
    d.circuits.resize(model.secondaries().size());
    for (std::size_t c = 0; c < model.secondaries().size(); ++c) {
      const auto& sc = model.secondaries()[c];
      AcInput& in = d.circuits[c];
      for (std::size_t m : sc.metered_customers()) {
        const NodeId node = sc.customers[m].node;
        in.meter_voltage.push_back(std::abs(v[node.index()]) *
                                   (1.0 + truncated_gaussian(rng, config.max_error_meter_voltage)));
        in.meter_energy.push_back(truth.injections[k][node.index()].p * config.interval_h *
                                  (1.0 + truncated_gaussian(rng, config.max_error_meter_energy)));
      }
    }
  });
  return out;
}

StateVector circuit_state(const SecondaryCircuit& circuit, const StateVector& joint) {
  StateVector s = StateVector::zeros(static_cast<int>(circuit.branches.size()));
  for (std::size_t k = 0; k < circuit.branches.size(); ++k)
    s.set_current(BranchId{static_cast<int>(k)}, joint.current(circuit.branches[k]));
  return s;
}

StateVector primary_state(const FeederModel& model, const StateVector& joint) {
  const auto& pv = model.primary();
  StateVector s = StateVector::zeros(static_cast<int>(pv.branches.size()));
  for (std::size_t k = 0; k < pv.branches.size(); ++k)
    s.set_current(BranchId{static_cast<int>(k)}, joint.current(pv.branches[k]));
  return s;
}

std::vector<Complex> oracle_transformer_voltages(const FeederModel& model, const GroundTruth& truth,
                                                 const TimestepData& data) {
  const auto& pv = model.primary();
  const auto v = forward_sweep(pv.network, Complex(data.scada.v_root, 0.0),
                               primary_state(model, truth.currents.at(static_cast<std::size_t>(data.t))));
  std::vector<Complex> out;
  for (NodeId local : pv.transformer_local) out.push_back(v[local.index()]);
  return out;
}

std::vector<std::vector<AcSample>> training_samples(const FeederModel& model, const GroundTruth& truth,
                                                    std::span<const TimestepData> data) {
  const auto circuits = model.secondaries();
  std::vector<std::vector<AcSample>> out(circuits.size());
  for (const auto& d : data) {
    const auto vt = oracle_transformer_voltages(model, truth, d);
    const auto& joint = truth.currents.at(static_cast<std::size_t>(d.t));
    for (std::size_t c = 0; c < circuits.size(); ++c) {
      AcSample s{d.circuits[c], circuit_state(circuits[c], joint)};
      s.input.v_transformer = vt[c];
      out[c].push_back(std::move(s));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic feeders

RadialNetwork generate_primary_case(int nodes, std::uint64_t seed) {
  if (nodes < 2) throw std::invalid_argument("a primary case needs at least two nodes");
  Rng rng(seed);
  std::uniform_real_distribution<double> r_dist(1e-4, 4e-4), ratio(1.5, 2.5);
  std::vector<Branch> b;
  for (int k = 1; k < nodes; ++k) {
    std::uniform_int_distribution<int> parent(0, k - 1);
    const double r = r_dist(rng);
    b.push_back({NodeId{parent(rng)}, NodeId{k}, r, r * ratio(rng)});
  }
  return RadialNetwork(nodes, NodeId{0}, std::move(b));
}

FeederModel generate_feeder60(std::uint64_t seed) {
  Rng rng(seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  FeederDescription d;
  constexpr int kJunctions = 15, kTransformers = 44, kCustomers = 238;

  d.nodes.push_back({NodeId{0}, NodeRole::Substation, "abc"});
  for (int j = 1; j <= kJunctions; ++j) d.nodes.push_back({NodeId{j}, NodeRole::PrimaryJunction, "abc"});
  const char* phases[] = {"a", "b", "c"};
  for (int t = 0; t < kTransformers; ++t)
    d.nodes.push_back({NodeId{kJunctions + 1 + t}, NodeRole::Transformer, phases[t % 3]});

  int next_branch = 0;
  auto primary_branch = [&](int from, int to, double r_lo, double r_hi) {
    const double r = uni(r_lo, r_hi);
    d.branches.push_back({BranchId{next_branch++}, NodeId{from}, NodeId{to}, r, r * uni(1.6, 2.4)});
  };
  // Trunk 0-1-...-8 and laterals.
  for (int j = 1; j <= 8; ++j) primary_branch(j - 1, j, 1.5e-4, 3e-4);
  const std::pair<int, int> laterals[] = {{3, 9}, {9, 10}, {5, 11}, {11, 12}, {6, 13}, {8, 14}, {14, 15}};
  for (auto [from, to] : laterals) primary_branch(from, to, 1e-4, 4e-4);
  // Transformer taps: each junction gets 2-3, chained or starred at random.
  std::vector<int> last_tap(kJunctions + 1, -1);
  for (int t = 0; t < kTransformers; ++t) {
    const int junction = 1 + (t % kJunctions);
    const int node = kJunctions + 1 + t;
    const int from = (last_tap[static_cast<std::size_t>(junction)] >= 0 && uni(0, 1) < 0.5)
                         ? last_tap[static_cast<std::size_t>(junction)]
                         : junction;
    primary_branch(from, node, 1e-4, 4e-4);
    last_tap[static_cast<std::size_t>(junction)] = node;
  }

  // Customer counts: 3..9 per circuit, summing to 238.
  std::vector<int> counts(kTransformers, 3);
  for (int extra = kCustomers - 3 * kTransformers; extra > 0;) {
    const auto k = std::uniform_int_distribution<std::size_t>(0, kTransformers - 1)(rng);
    if (counts[k] < 9) {
      ++counts[k];
      --extra;
    }
  }

  int next_node = 1 + kJunctions + kTransformers;
  std::lognormal_distribution<double> size_dist(0.0, 0.3);
  for (int t = 0; t < kTransformers; ++t) {
    SecondaryRecord s;
    s.id = t;
    const int tnode = kJunctions + 1 + t;
    const std::string phase = phases[t % 3];
    d.transformers.push_back({NodeId{tnode}, t});
    const int bus = next_node++;
    s.nodes.push_back({NodeId{bus}, NodeRole::SecondaryJunction, phase});
    s.branches.push_back({BranchId{next_branch++}, NodeId{tnode}, NodeId{bus}, uni(0.015, 0.025), uni(0.04, 0.055)});
    int pole = bus;
    const int n = counts[static_cast<std::size_t>(t)];
    if (n >= 5) {
      pole = next_node++;
      s.nodes.push_back({NodeId{pole}, NodeRole::SecondaryJunction, phase});
      s.branches.push_back({BranchId{next_branch++}, NodeId{bus}, NodeId{pole}, uni(0.03, 0.06), uni(0.01, 0.02)});
    }
    for (int c = 0; c < n; ++c) {
      const int cnode = next_node++;
      const int from = (c < n / 2) ? bus : pole;
      s.nodes.push_back({NodeId{cnode}, NodeRole::Customer, phase});
      s.branches.push_back({BranchId{next_branch++}, NodeId{from}, NodeId{cnode}, uni(0.02, 0.04), uni(0.005, 0.01)});
      CustomerRecord rec{NodeId{cnode}, false, uni(0, 1) < 0.3};
      rec.nominal_p = 0.015 * size_dist(rng);
      rec.nominal_q = rec.nominal_p * 0.3;
      s.customers.push_back(rec);
    }
    d.secondaries.push_back(std::move(s));
  }
  return FeederModel::build(std::move(d));
}

}  // namespace hdsse
