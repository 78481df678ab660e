#include <gtest/gtest.h>

#include <map>

#include "hdsse/bench.hpp"
#include "hdsse/errors.hpp"
#include "hdsse/powerflow.hpp"
#include "test_support.hpp"

namespace hdsse {
namespace {

TEST(Monolithic, MeasurementComposition) {
  const FeederModel m = FeederModel::build(parse_feeder(testing::small_feeder_text(3)));
  TimestepData d;
  d.scada = {1.01, 0.04, 0.012};
  d.circuits.resize(1);
  d.circuits[0].meter_voltage = {0.99};
  d.circuits[0].meter_energy = {0.005};
  const MonolithicConfig cfg;
  const auto z = monolithic_measurements(m, d, cfg);
  // Root V/P/Q, metered P/V/Q, two unmetered P/Q, zero injections at nodes 1, 2, 3.
  ASSERT_EQ(z.size(), 3u + 3u + 4u + 6u);

  std::map<std::pair<int, MeasurementKind>, Measurement> by;
  for (const auto& mz : z) by[{mz.location, mz.kind}] = mz;
  const auto at = [&](int n, MeasurementKind k) { return by.at({n, k}); };
  EXPECT_DOUBLE_EQ(at(0, MeasurementKind::PInjection).value, -0.04);
  EXPECT_NEAR(at(0, MeasurementKind::VoltageMagnitude).variance, std::pow(0.03 * 1.01 / 3, 2), 1e-18);
  // 0.012 exceeds the 0.01 power floor.
  EXPECT_NEAR(at(0, MeasurementKind::QInjection).variance, std::pow(0.03 * 0.012 / 3, 2), 1e-18);
  EXPECT_DOUBLE_EQ(at(4, MeasurementKind::PInjection).value, 0.02);
  EXPECT_DOUBLE_EQ(at(4, MeasurementKind::VoltageMagnitude).value, 0.99);
  EXPECT_DOUBLE_EQ(at(5, MeasurementKind::PInjection).value, 0.01);
  EXPECT_NEAR(at(5, MeasurementKind::PInjection).variance, 0.005 * 0.005, 1e-18);
  EXPECT_DOUBLE_EQ(at(6, MeasurementKind::QInjection).value, 0.003);
  for (int n : {1, 2, 3}) {
    EXPECT_EQ(at(n, MeasurementKind::PInjection).value, 0.0);
    EXPECT_EQ(at(n, MeasurementKind::QInjection).variance, cfg.zero_injection_variance);
  }
  EXPECT_EQ(by.count({5, MeasurementKind::VoltageMagnitude}), 0u);

  d.circuits[0].meter_energy.clear();
  EXPECT_THROW(monolithic_measurements(m, d, cfg), DimensionError);
}

TEST(Monolithic, SmallPowerFloor) {
  const FeederModel m = FeederModel::build(parse_feeder(testing::small_feeder_text(2)));
  TimestepData d;
  d.scada = {1.0, 0.001, 0.0};
  d.circuits.resize(1);
  d.circuits[0].meter_voltage = {1.0};
  d.circuits[0].meter_energy = {0.0};
  const auto z = monolithic_measurements(m, d);
  EXPECT_NEAR(z[1].variance, std::pow(0.03 * 0.01 / 3, 2), 1e-20);
  EXPECT_NEAR(z[2].variance, std::pow(0.03 * 0.01 / 3, 2), 1e-20);
}

TEST(Monolithic, NoiselessFullyMeteredRecoversActivePower) {
  FeederDescription desc = parse_feeder(testing::small_feeder_text(2));
  for (auto& c : desc.secondaries[0].customers) {
    c.has_meter = true;
    c.nominal_q = 0.002;
  }
  const FeederModel m = FeederModel::build(desc);
  std::vector<PowerInjection> inj(static_cast<std::size_t>(m.node_count()));
  inj[4] = {0.02, 0.002};
  inj[5] = {0.015, 0.002};
  const auto pf = solve_powerflow(m.network(), inj, {1.02, 0.0}, {1e-13, 100});
  TimestepData d;
  Complex head = 0.0;
  for (BranchId b : m.network().child_branches(m.root())) head += pf.currents.current(b);
  const Complex s = pf.voltages[0] * std::conj(head);
  d.scada = {1.02, s.real(), s.imag()};
  d.circuits.resize(1);
  for (int n : {4, 5}) {
    d.circuits[0].meter_voltage.push_back(std::abs(pf.voltages[n]));
    d.circuits[0].meter_energy.push_back(inj[n].p * 0.25);
  }
  const auto r = monolithic_estimate(m, d, {}, StateVector::zeros(m.branch_count()));
  EXPECT_LT((r.solution.state.values - pf.currents.values).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_GE(r.seconds, 0.0);
}

}  // namespace
}  // namespace hdsse
