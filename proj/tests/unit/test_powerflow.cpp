#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <filesystem>

#include "hdsse/errors.hpp"
#include "hdsse/powerflow.hpp"
#include "test_support.hpp"

using namespace hdsse;
using hdsse::testing::chain;

namespace {

// Closed-form solution of V conj(I) = S with V = 1 - z I on a single branch.
// With V = 1 - zI and I = conj(S / V): |V|^2 - V_0 conj... reduces to the
// classic quartic in |V|: |V|^4 + (2(rP + xQ) - 1)|V|^2 + |z|^2 |S|^2 = 0.
Complex single_load_voltage(Complex z, Complex s) {
  const double r = z.real(), x = z.imag(), p = s.real(), q = s.imag();
  const double b = 2.0 * (r * p + x * q) - 1.0;
  const double c = std::norm(z) * std::norm(s);
  const double v2 = (-b + std::sqrt(b * b - 4.0 * c)) / 2.0;  // high-voltage root
  const double vm = std::sqrt(v2);
  // Angle from V = 1 - z conj(S)/conj(V): Im part gives sin, Re part gives cos.
  // V * conj(V) = |V|^2 = conj(V) - z conj(S)  => conj(V) = |V|^2 + z conj(S).
  const Complex conj_v = v2 + z * std::conj(s);
  EXPECT_NEAR(std::abs(conj_v), vm, 1e-12);
  return std::conj(conj_v);
}

}  // namespace

TEST(ForwardSweep, ZeroCurrentsGiveFlatProfile) {
  auto net = chain(5);
  auto v = forward_sweep(net, Complex(1.02, 0.01), StateVector::zeros(4));
  for (auto vn : v) EXPECT_EQ(vn, Complex(1.02, 0.01));
}

TEST(ForwardSweep, SingleBranchDrop) {
  auto net = chain(2, 0.01, 0.02);
  const Complex i[] = {Complex(1.0, 0.0)};
  auto v = forward_sweep(net, 1.0, StateVector::from_currents(i));
  EXPECT_NEAR(v[1].real(), 0.99, 1e-15);
  EXPECT_NEAR(v[1].imag(), -0.02, 1e-15);
}

TEST(ForwardSweep, ChainMatchesCumulativeDropOracle) {
  std::vector<Branch> b = {{NodeId{0}, NodeId{1}, 0.01, 0.02},
                           {NodeId{1}, NodeId{2}, 0.03, 0.01},
                           {NodeId{2}, NodeId{3}, 0.02, 0.05}};
  RadialNetwork net(4, NodeId{0}, b);
  const Complex cur[] = {Complex(0.5, -0.2), Complex(0.3, 0.1), Complex(-0.1, 0.05)};
  auto v = forward_sweep(net, Complex(1.01, 0.0), StateVector::from_currents(cur));
  Complex oracle = Complex(1.01, 0.0);
  for (int n = 1; n < 4; ++n) {
    oracle -= Complex(b[n - 1].r, b[n - 1].x) * cur[n - 1];
    EXPECT_NEAR(std::abs(v[static_cast<std::size_t>(n)] - oracle), 0.0, 1e-15);
  }
}

TEST(ForwardSweep, DropsSuperpose) {
  std::mt19937_64 rng(5);
  auto net = hdsse::testing::random_tree(25, rng);
  std::normal_distribution<double> d;
  StateVector a = StateVector::zeros(24), b2 = StateVector::zeros(24), sum = StateVector::zeros(24);
  for (int i = 0; i < 48; ++i) {
    a.values[i] = d(rng);
    b2.values[i] = d(rng);
  }
  sum.values = a.values + b2.values;
  const Complex root(1.0, 0.0);
  auto va = forward_sweep(net, root, a), vb = forward_sweep(net, root, b2), vs = forward_sweep(net, root, sum);
  for (std::size_t n = 0; n < va.size(); ++n) EXPECT_NEAR(std::abs(vs[n] - (va[n] + vb[n] - root)), 0.0, 1e-12);
}

TEST(ForwardSweep, WrongDimensionThrows) {
  auto net = chain(3);
  EXPECT_THROW(forward_sweep(net, 1.0, StateVector::zeros(5)), DimensionError);
}

TEST(SolvePowerflow, ZeroInjectionsGiveZeroCurrents) {
  auto net = chain(6);
  std::vector<PowerInjection> s(6);
  auto res = solve_powerflow(net, s, Complex(1.0, 0.0));
  EXPECT_EQ(res.currents.values.cwiseAbs().maxCoeff(), 0.0);
  for (auto v : res.voltages) EXPECT_EQ(v, Complex(1.0, 0.0));
}

TEST(SolvePowerflow, SingleLoadMatchesClosedForm) {
  auto net = chain(2, 0.01, 0.02);
  std::vector<PowerInjection> s = {{}, {0.1, 0.05}};
  auto res = solve_powerflow(net, s, Complex(1.0, 0.0), {1e-12, 100});
  const Complex v_oracle = single_load_voltage({0.01, 0.02}, {0.1, 0.05});
  const Complex i_oracle = std::conj(Complex(0.1, 0.05) / v_oracle);
  EXPECT_NEAR(std::abs(res.voltages[1] - v_oracle), 0.0, 1e-11);
  EXPECT_NEAR(std::abs(res.currents.current(BranchId{0}) - i_oracle), 0.0, 1e-11);
}

TEST(SolvePowerflow, KclAndSweepConsistencyOnRandomTrees) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> load(-0.02, 0.05);
  for (int trial = 0; trial < 20; ++trial) {
    auto net = hdsse::testing::random_tree(30, rng);
    std::vector<PowerInjection> s(30);
    for (auto& inj : s) inj = {load(rng), 0.3 * load(rng)};
    const double tol = 1e-9;
    auto res = solve_powerflow(net, s, Complex(1.0, 0.0), {tol, 100});
    EXPECT_LT(max_kcl_residual(net, res.voltages, res.currents, s), 10 * tol);
    auto swept = forward_sweep(net, 1.0, res.currents);
    for (std::size_t n = 0; n < swept.size(); ++n) EXPECT_NEAR(std::abs(swept[n] - res.voltages[n]), 0.0, 1e-12);
    EXPECT_LT(energy_balance_residual(net, res.voltages, res.currents, s), 1e-7);
  }
}

TEST(SolvePowerflow, OverloadFailsToConverge) {
  auto net = chain(2, 0.5, 0.5);
  std::vector<PowerInjection> s = {{}, {5.0, 5.0}};
  EXPECT_ANY_THROW(solve_powerflow(net, s, Complex(1.0, 0.0)));
}

TEST(SolvePowerflow, Feeder60NominalLoadsConverge) {
  auto model = load_feeder(std::filesystem::path(HDSSE_DATA_DIR) / "feeder60.model");
  std::vector<PowerInjection> s(static_cast<std::size_t>(model.node_count()));
  for (const auto& sc : model.secondaries())
    for (const auto& c : sc.customers) s[c.node.index()] = {c.nominal_p, c.nominal_q};
  auto res = solve_powerflow(model.network(), s, Complex(1.03, 0.0));
  EXPECT_LT(res.iterations, 20);
  for (auto v : res.voltages) {
    EXPECT_GE(std::abs(v), 0.9);
    EXPECT_LE(std::abs(v), 1.1);
  }
  EXPECT_LT(max_kcl_residual(model.network(), res.voltages, res.currents, s), 1e-7);
}
