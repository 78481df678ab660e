#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "hdsse/bench.hpp"
#include "hdsse/metrics.hpp"

namespace hdsse {
namespace {

TEST(Mape, IdenticalSeriesIsZero) {
  const std::vector<double> a{1.0, -2.0, 3.5};
  EXPECT_DOUBLE_EQ(mape(a, a), 0.0);
}

TEST(Mape, HeadlineVoltageExample) {
  const std::vector<double> est{0.989}, act{1.0};
  EXPECT_NEAR(mape(est, act), 1.1, 1e-12);
}

TEST(Mape, HalfError) {
  // actual 2.0, estimate 1.0
  const std::vector<double> est{1.0}, act{2.0};
  EXPECT_DOUBLE_EQ(mape(est, act), 50.0);
}

TEST(Mape, GuardExcludesAndCounts) {
  const std::vector<double> est{1.0, 5.0, 2.0}, act{1.0, 1e-12, 4.0};
  const MapeResult r = mape_detail(est, act);
  EXPECT_EQ(r.included, 2u);
  EXPECT_EQ(r.excluded, 1u);
  EXPECT_DOUBLE_EQ(r.percent, 25.0);
}

TEST(Mape, Errors) {
  const std::vector<double> a{1.0}, b{1.0, 2.0}, z{0.0}, empty;
  EXPECT_THROW(mape(a, b), std::invalid_argument);
  EXPECT_THROW(mape(empty, empty), std::invalid_argument);
  EXPECT_THROW(mape(a, z), std::invalid_argument);
}

TEST(Mape, ScaleInvariant) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> e(20), a(20), ke(20), ka(20);
    const double k = u(rng) + 3.5;
    for (int i = 0; i < 20; ++i) {
      e[i] = u(rng);
      a[i] = u(rng) + (u(rng) > 0 ? 4.0 : -4.0);
      ke[i] = -k * e[i];
      ka[i] = -k * a[i];
    }
    EXPECT_NEAR(mape(ke, ka), mape(e, a), 1e-10 * mape(e, a));
  }
}

TEST(Accuracy, KnownValues) {
  AccuracyAccumulator acc;
  const std::vector<Complex> truth{std::polar(1.0, 0.0), std::polar(1.0, -0.02), std::polar(0.95, -0.04)};
  const std::vector<Complex> est{std::polar(1.0, 0.0), std::polar(0.99, -0.01), std::polar(0.95, -0.05)};
  StateVector ti(Eigen::VectorXd::Ones(4)), ei(Eigen::VectorXd::Constant(4, 1.1));
  ti.values[3] = 0.0;
  acc.add(est, truth, ei, ti);
  EXPECT_NEAR(acc.voltage_mape(), 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(acc.angle_mae_rad(), 0.02 / 3.0, 1e-12);
  EXPECT_NEAR(acc.angle_mape(), (50.0 + 25.0) / 2.0, 1e-9);
  EXPECT_EQ(acc.angle_excluded(), 1u);
  EXPECT_NEAR(acc.current_mape(), 10.0, 1e-9);
  EXPECT_EQ(acc.current_excluded(), 1u);
  ASSERT_EQ(acc.samples(), 1u);
  EXPECT_NEAR(acc.per_step_voltage_mape()[0], 1.0 / 3.0, 1e-12);
}

TEST(Summarize, OrderStatistics) {
  std::vector<double> s;
  for (int i = 100; i >= 1; --i) s.push_back(i);
  const SampleStats st = summarize(s);
  EXPECT_EQ(st.count, 100u);
  EXPECT_DOUBLE_EQ(st.median, 50.5);
  EXPECT_DOUBLE_EQ(st.mean, 50.5);
  EXPECT_DOUBLE_EQ(st.p95, 95.0);
  EXPECT_DOUBLE_EQ(st.max, 100.0);
  EXPECT_EQ(summarize({}).count, 0u);
}

}  // namespace
}  // namespace hdsse
