#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "hdsse/errors.hpp"
#include "hdsse/powerflow.hpp"
#include "hdsse/scenario.hpp"
#include "test_support.hpp"

namespace hdsse {
namespace {

const FeederModel& feeder60() {
  static const FeederModel m = load_feeder(HDSSE_DATA_DIR "/feeder60.model");
  return m;
}

ScenarioConfig short_config(int steps = 24) {
  ScenarioConfig c;
  c.timesteps = steps;
  c.seed = 42;
  return c;
}

TEST(ScenarioConfig, RoundTrip) {
  ScenarioConfig c;
  c.timesteps = 500;
  c.seed = 99;
  c.meter_penetration = 0.25;
  c.max_error_scada_power = 0.01;
  const ScenarioConfig back = parse_scenario_config(format_scenario_config(c));
  EXPECT_EQ(format_scenario_config(back), format_scenario_config(c));
  EXPECT_EQ(back.timesteps, 500);
  EXPECT_EQ(back.seed, 99u);
  EXPECT_DOUBLE_EQ(back.meter_penetration, 0.25);
}

TEST(ScenarioConfig, ParseErrors) {
  EXPECT_THROW(parse_scenario_config("{"), ParseError);
  EXPECT_THROW(parse_scenario_config("[1, 2]"), ParseError);
  EXPECT_THROW(parse_scenario_config(R"({"no_such_key": 1})"), ParseError);
  EXPECT_THROW(parse_scenario_config(R"({"timesteps": "many"})"), ParseError);
  EXPECT_THROW(parse_scenario_config(R"({"meter_penetration": 1.5})"), ValidationError);
  EXPECT_THROW(parse_scenario_config(R"({"timesteps": 0})"), ValidationError);
}

TEST(Profiles, NoPvAtZeroPenetration) {
  ScenarioConfig c = short_config(96);
  c.pv_penetration = 0.0;
  const Profiles p = generate_profiles(feeder60(), c);
  EXPECT_EQ(p.pv.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Profiles, PvPenetrationRatio) {
  ScenarioConfig c = short_config(96);
  c.pv_penetration = 0.5;
  const Profiles p = generate_profiles(feeder60(), c);
  const double ratio = p.pv.colwise().sum().maxCoeff() / p.p.colwise().sum().maxCoeff();
  EXPECT_NEAR(ratio, 0.5, 0.005);
}

TEST(Profiles, ShapesAndBounds) {
  const Profiles p = generate_profiles(feeder60(), short_config(96));
  EXPECT_EQ(p.p.rows(), 238);
  EXPECT_EQ(p.timesteps(), 96);
  EXPECT_GT(p.p.minCoeff(), 0.0);
  EXPECT_GE(p.pv.minCoeff(), 0.0);
  EXPECT_GE(p.root_voltage.minCoeff(), 1.0);
  EXPECT_LE(p.root_voltage.maxCoeff(), 1.05);
}

TEST(Profiles, SameSeedReproducible) {
  const Profiles a = generate_profiles(feeder60(), short_config());
  const Profiles b = generate_profiles(feeder60(), short_config());
  EXPECT_EQ(a.p, b.p);
  EXPECT_EQ(a.q, b.q);
  EXPECT_EQ(a.pv, b.pv);
  EXPECT_EQ(a.root_voltage, b.root_voltage);
  ScenarioConfig other = short_config();
  other.seed = 43;
  EXPECT_NE(generate_profiles(feeder60(), other).p, a.p);
}

TEST(Truth, ZeroProfilesGiveFlatNetwork) {
  Profiles p = generate_profiles(feeder60(), short_config(3));
  p.p.setZero();
  p.q.setZero();
  p.pv.setZero();
  const GroundTruth g = generate_truth(feeder60(), p);
  for (int t = 0; t < 3; ++t) {
    EXPECT_EQ(g.currents[t].values.cwiseAbs().maxCoeff(), 0.0);
    for (const Complex& v : g.voltages[t]) EXPECT_NEAR(std::abs(v - Complex{p.root_voltage[t], 0.0}), 0.0, 1e-15);
  }
}

TEST(Truth, KclAndSweepConsistency) {
  const FeederModel& m = feeder60();
  const Profiles p = generate_profiles(m, short_config(24));
  const GroundTruth g = generate_truth(m, p);
  for (int t = 0; t < g.timesteps(); ++t) {
    const auto& net = m.network();
    EXPECT_LT(max_kcl_residual(net, g.voltages[t], g.currents[t], g.injections[t]), 1e-8);
    EXPECT_LT(energy_balance_residual(net, g.voltages[t], g.currents[t], g.injections[t]), 1e-8);
    const auto swept = forward_sweep(net, g.voltages[t][m.root().index()], g.currents[t]);
    for (std::size_t n = 0; n < swept.size(); ++n) EXPECT_LT(std::abs(swept[n] - g.voltages[t][n]), 1e-10);
  }
}

TEST(Truth, InjectionsFollowProfiles) {
  const FeederModel& m = feeder60();
  const Profiles p = generate_profiles(m, short_config(4));
  const GroundTruth g = generate_truth(m, p);
  const auto nodes = customer_nodes(m);
  for (int t = 0; t < 4; ++t)
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      EXPECT_DOUBLE_EQ(g.injections[t][nodes[i].index()].p, p.p(i, t) - p.pv(i, t));
      EXPECT_DOUBLE_EQ(g.injections[t][nodes[i].index()].q, p.q(i, t));
    }
}

TEST(Truth, ParallelMatchesSerialBitwise) {
  const FeederModel& m = feeder60();
  const Profiles p = generate_profiles(m, short_config(32));
  const GroundTruth a = generate_truth(m, p), b = generate_truth_serial(m, p);
  ASSERT_EQ(a.timesteps(), b.timesteps());
  for (int t = 0; t < a.timesteps(); ++t) {
    EXPECT_EQ(a.currents[t].values, b.currents[t].values);
    EXPECT_EQ(a.voltages[t], b.voltages[t]);
  }
}

TEST(Measurements, ZeroErrorReproducesTruth) {
  ScenarioConfig c = short_config(6);
  c.max_error_scada_voltage = c.max_error_scada_power = c.max_error_meter_voltage = c.max_error_meter_energy = 0.0;
  const FeederModel m = apply_metering(feeder60(), c);
  const GroundTruth g = generate_truth(m, generate_profiles(m, c));
  const auto data = synthesize_measurements(m, g, c);
  for (int t = 0; t < 6; ++t) {
    const auto& d = data[static_cast<std::size_t>(t)];
    EXPECT_EQ(d.scada.v_root, std::abs(g.voltages[t][m.root().index()]));
    Complex head = 0.0;
    for (BranchId b : m.network().child_branches(m.root())) head += g.currents[t].current(b);
    const Complex s = g.voltages[t][m.root().index()] * std::conj(head);
    EXPECT_NEAR(d.scada.p_supply, s.real(), 1e-15);
    EXPECT_NEAR(d.scada.q_supply, s.imag(), 1e-15);
    for (std::size_t k = 0; k < m.secondaries().size(); ++k) {
      const auto& sc = m.secondaries()[k];
      const auto metered = sc.metered_customers();
      ASSERT_EQ(d.circuits[k].meter_voltage.size(), metered.size());
      for (std::size_t i = 0; i < metered.size(); ++i) {
        const NodeId node = sc.customers[metered[i]].node;
        EXPECT_EQ(d.circuits[k].meter_voltage[i], std::abs(g.voltages[t][node.index()]));
        EXPECT_DOUBLE_EQ(d.circuits[k].meter_energy[i], g.injections[t][node.index()].p * c.interval_h);
      }
    }
  }
}

TEST(Measurements, SameSeedReproducible) {
  const ScenarioConfig c = short_config(8);
  const FeederModel m = apply_metering(feeder60(), c);
  const GroundTruth g = generate_truth(m, generate_profiles(m, c));
  const auto a = synthesize_measurements(m, g, c), b = synthesize_measurements(m, g, c);
  for (std::size_t t = 0; t < a.size(); ++t) {
    EXPECT_EQ(a[t].scada.v_root, b[t].scada.v_root);
    for (std::size_t k = 0; k < a[t].circuits.size(); ++k)
      EXPECT_EQ(a[t].circuits[k].meter_voltage, b[t].circuits[k].meter_voltage);
  }
}

TEST(TruncatedGaussian, BoundedWithExpectedSpread) {
  Rng rng(2024);
  constexpr int n = 10000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double e = truncated_gaussian(rng, 0.03);
    ASSERT_LE(std::abs(e), 0.03);
    sum += e;
    sq += e * e;
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  // Truncation at 3 sigma shrinks the spread by about 1.4%.
  EXPECT_NEAR(sd, 0.01, 0.0005);
  EXPECT_NEAR(mean, 0.0, 4.0 * 0.01 / std::sqrt(n));
  EXPECT_EQ(truncated_gaussian(rng, 0.0), 0.0);
}

TEST(Metering, CountsAndNesting) {
  const FeederModel& m = feeder60();
  EXPECT_EQ(select_metered(m, 0.1, 7).size(), 24u);
  EXPECT_EQ(select_metered(m, 1.0, 7).size(), 238u);
  EXPECT_TRUE(select_metered(m, 0.0, 7).empty());
  std::vector<NodeId> prev;
  for (double pen : {0.1, 0.25, 0.5, 0.75, 1.0}) {
    const auto cur = select_metered(m, pen, 7);
    EXPECT_TRUE(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end())) << pen;
    prev = cur;
  }
  EXPECT_THROW(select_metered(m, 1.2, 7), std::invalid_argument);
  ScenarioConfig c;
  c.meter_penetration = 0.5;
  const FeederModel metered = apply_metering(m, c);
  int count = 0;
  for (const auto& sc : metered.secondaries()) count += static_cast<int>(sc.metered_customers().size());
  EXPECT_EQ(count, 119);
}

TEST(Feeder60, Counts) {
  const FeederModel& m = feeder60();
  EXPECT_EQ(m.primary_node_count(), 60);
  EXPECT_EQ(m.secondaries().size(), 44u);
  EXPECT_EQ(m.customer_count(), 238);
  EXPECT_EQ(customer_nodes(m).size(), 238u);
  // The bundled file is the generator's output.
  EXPECT_EQ(format_feeder(generate_feeder60().description()), format_feeder(m.description()));
}

TEST(TrainingSamples, LabelsAreCircuitStates) {
  ScenarioConfig c = short_config(5);
  c.meter_penetration = 0.5;
  const FeederModel m = apply_metering(feeder60(), c);
  const GroundTruth g = generate_truth(m, generate_profiles(m, c));
  const auto data = synthesize_measurements(m, g, c);
  const auto samples = training_samples(m, g, data);
  ASSERT_EQ(samples.size(), m.secondaries().size());
  for (std::size_t k = 0; k < samples.size(); ++k) {
    ASSERT_EQ(samples[k].size(), 5u);
    for (int t = 0; t < 5; ++t) {
      EXPECT_EQ(samples[k][t].truth.values, circuit_state(m.secondaries()[k], g.currents[t]).values);
      EXPECT_EQ(samples[k][t].input.meter_voltage, data[t].circuits[k].meter_voltage);
    }
  }
}

TEST(PrimaryCase, RadialAndSized) {
  const RadialNetwork net = generate_primary_case(10, 3);
  EXPECT_EQ(net.node_count(), 10);
  EXPECT_EQ(net.branch_count(), 9);
  const auto parent = testing::bfs_parents(net);
  EXPECT_TRUE(std::none_of(parent.begin(), parent.end(), [](int p) { return p == -2; }));
  EXPECT_THROW(generate_primary_case(1, 3), std::invalid_argument);
}

}  // namespace
}  // namespace hdsse
