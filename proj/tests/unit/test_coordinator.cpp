#include <gtest/gtest.h>

#include <cmath>

#include "hdsse/coordinator.hpp"
#include "hdsse/errors.hpp"
#include "hdsse/scenario.hpp"
#include "test_support.hpp"

namespace hdsse {
namespace {

std::vector<AcModule> fresh_modules(const FeederModel& m, AcConfig cfg = {}) {
  std::vector<AcModule> out;
  for (const auto& sc : m.secondaries()) out.emplace_back(sc, cfg, 1000 + sc.id);
  return out;
}

// Small feeder plus modules pretrained on its own simulated history.
struct Fixture {
  FeederModel model;
  std::vector<AcModule> modules;
  GroundTruth truth;
  std::vector<TimestepData> data;
};

const Fixture& trained_small() {
  static const Fixture f = [] {
    Fixture fx{FeederModel::build(parse_feeder(testing::small_feeder_text(4))), {}, {}, {}};
    ScenarioConfig c;
    c.timesteps = 400;
    c.seed = 5;
    fx.truth = generate_truth(fx.model, generate_profiles(fx.model, c));
    fx.data = synthesize_measurements(fx.model, fx.truth, c);
    const auto samples = training_samples(fx.model, fx.truth, std::span(fx.data).first(300));
    fx.modules = fresh_modules(fx.model);
    PretrainOptions opt;
    opt.epochs = 40;
    for (std::size_t k = 0; k < fx.modules.size(); ++k) pretrain(fx.modules[k], samples[k], opt);
    return fx;
  }();
  return f;
}

TEST(Hierarchy, RejectsMismatchedModules) {
  const FeederModel m = FeederModel::build(parse_feeder(testing::small_feeder_text(2)));
  EXPECT_THROW(Hierarchy(m, {}), std::invalid_argument);
  HierarchyConfig cfg;
  cfg.epsilon_v = 0.0;
  EXPECT_THROW(Hierarchy(m, fresh_modules(m), cfg), std::invalid_argument);
}

TEST(Hierarchy, ZeroLoadConvergesFlatInOneIteration) {
  FeederDescription d = parse_feeder(testing::small_feeder_text(3));
  for (auto& c : d.secondaries[0].customers) c.nominal_p = c.nominal_q = 0.0;
  const FeederModel m = FeederModel::build(d);
  auto modules = fresh_modules(m);
  for (auto& mod : modules) for (double& p : mod.policy().mean_net.parameters()) p = 0.0;
  Hierarchy h(m, std::move(modules));
  TimestepData data;
  data.scada = {1.0, 0.0, 0.0};
  data.circuits.resize(1);
  data.circuits[0].meter_voltage = {1.0};
  data.circuits[0].meter_energy = {0.0};
  const TimestepResult r = h.run_timestep(data);
  EXPECT_EQ(r.status, StageStatus::Converged);
  EXPECT_EQ(r.iterations, 1);
  EXPECT_LT(r.primary.state.values.cwiseAbs().maxCoeff(), 1e-12);
  for (const Complex& v : h.joint_estimate(r).voltages) EXPECT_LT(std::abs(v - Complex{1.0, 0.0}), 1e-12);
}

TEST(Hierarchy, ColdStartBoundary) {
  const FeederModel m = FeederModel::build(parse_feeder(testing::small_feeder_text(3)));
  const Hierarchy h(m, fresh_modules(m));
  TimestepData data;
  data.circuits.resize(1);
  data.circuits[0].meter_voltage = {1.0};
  data.circuits[0].meter_energy = {0.005};  // 0.02 p.u. over 15 min
  const auto b = h.cold_start_boundary(data);
  ASSERT_EQ(b.size(), 1u);
  EXPECT_NEAR(b[0].p, 0.02 + 2 * 0.01, 1e-15);
  EXPECT_NEAR(b[0].q, 3 * 0.003, 1e-15);
  EXPECT_NEAR(b[0].var_p, 0.25 * 0.04 * 0.04, 1e-15);
  EXPECT_NEAR(b[0].var_q, 1e-4, 1e-15);  // 0.25 x 0.009^2 is below the floor
}

TEST(Hierarchy, HugeBoundaryVarianceHasNegligibleInfluence) {
  const FeederModel m = FeederModel::build(parse_feeder(testing::small_feeder_text(2)));
  const Hierarchy h(m, fresh_modules(m));
  TimestepData data;
  data.scada = {1.02, 0.05, 0.01};
  const std::vector<BoundaryUp> a{{0.05, 0.01, 1e12, 1e12}}, b{{0.5, -0.3, 1e12, 1e12}};
  const auto& net = m.primary().network;
  const auto sa = wls_solve(net, h.primary_measurements(data, a), {}, StateVector::zeros(net.branch_count()));
  const auto sb = wls_solve(net, h.primary_measurements(data, b), {}, StateVector::zeros(net.branch_count()));
  EXPECT_LT((sa.state.values - sb.state.values).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Hierarchy, ConfidenceFactorIsMonotoneInTde) {
  const FeederModel m = FeederModel::build(parse_feeder(testing::small_feeder_text(2)));
  auto modules = fresh_modules(m);
  const AcInput in{{1.0}, {0.005}, {1.0, 0.0}};
  train_step(modules[0], in);  // a module with history
  Hierarchy h(m, modules);
  EXPECT_DOUBLE_EQ(Hierarchy(m, fresh_modules(m)).confidence_factor(0), 1.0);
  double prev = 0.0;
  for (double tde : {0.0, 1e-4, 1e-3, 1e-2, 1e-1}) {
    AcModule copy = modules[0];
    for (int i = 0; i < 30; ++i) copy.observe({tde, 1e-3, 0.0, false}, 20.0);
    std::vector<AcModule> one{copy};
    const double f = Hierarchy(m, one).confidence_factor(0);
    EXPECT_GE(f, 1.0);
    EXPECT_GE(f, prev) << tde;
    prev = f;
  }
}

TEST(Hierarchy, MeanModeDeterministicAndSerialMatchesParallel) {
  const Fixture& fx = trained_small();
  Hierarchy a(fx.model, fx.modules), b(fx.model, fx.modules);
  b.config().parallel = false;
  for (int t = 300; t < 320; ++t) {
    const TimestepResult ra = a.run_timestep(fx.data[t]), rb = b.run_timestep(fx.data[t]);
    EXPECT_EQ(ra.iterations, rb.iterations);
    EXPECT_EQ(ra.primary.state.values, rb.primary.state.values);
    ASSERT_EQ(ra.secondary.size(), rb.secondary.size());
    for (std::size_t k = 0; k < ra.secondary.size(); ++k) EXPECT_EQ(ra.secondary[k].values, rb.secondary[k].values);
  }
}

TEST(Hierarchy, ConvergedResultIsAFixedPoint) {
  const Fixture& fx = trained_small();
  Hierarchy h(fx.model, fx.modules);
  const double eps = h.config().epsilon_v;
  const auto& net = fx.model.primary().network;
  for (int t = 300; t < 340; ++t) {
    const TimestepResult r = h.run_timestep(fx.data[t]);
    ASSERT_EQ(r.status, StageStatus::Converged) << t;
    // One more outer pass from the returned boundary.
    const auto sol = wls_solve(net, h.primary_measurements(fx.data[t], r.boundary), h.config().wls, r.primary.state);
    for (std::size_t k = 0; k < r.transformer_voltages.size(); ++k) {
      const Complex vt = sol.voltages[fx.model.primary().transformer_local[k].index()];
      EXPECT_LT(std::abs(vt - r.transformer_voltages[k]), eps);
      AcInput in = fx.data[t].circuits[k];
      in.v_transformer = vt;
      const AcModule& mod = h.modules()[k];
      BoundaryUp b = boundary_up(mod, in, infer_mean(mod, in));
      EXPECT_LT(std::abs(b.p - r.boundary[k].p), 10 * eps);
      EXPECT_LT(std::abs(b.q - r.boundary[k].q), 10 * eps);
    }
  }
}

TEST(Hierarchy, JointEstimateTracksTruth) {
  const Fixture& fx = trained_small();
  Hierarchy h(fx.model, fx.modules);
  double worst = 0.0;
  for (int t = 300; t < 400; ++t) {
    const JointEstimate e = h.joint_estimate(h.run_timestep(fx.data[t]));
    for (std::size_t n = 0; n < e.voltages.size(); ++n)
      worst = std::max(worst, std::abs(std::abs(e.voltages[n]) - std::abs(fx.truth.voltages[t][n])));
  }
  // Root SCADA error is at most 3%.
  EXPECT_LT(worst, 0.035);
}

TEST(Hierarchy, OfflineUpdateWithoutModules) {
  const FeederModel m = FeederModel::build(parse_feeder(
      "[base]\ns_base_va = 100000\nv_base_primary_v = 13800\nv_base_secondary_v = 240\n"
      "[nodes]\n0 substation abc\n1 primary abc\n2 primary abc\n"
      "[branches]\n0 0 1 0.001 0.002\n1 1 2 0.001 0.002\n"));
  Hierarchy h(m, {});
  std::vector<TimestepData> stream(3);
  for (auto& d : stream) d.scada = {1.0, 0.0, 0.0};
  const auto rep = h.run_offline_update(stream);
  ASSERT_EQ(rep.size(), 3u);
  for (const auto& r : rep) EXPECT_TRUE(r.empty());
}

TEST(Hierarchy, OfflineUpdateZeroPerturbationKeepsActor) {
  const Fixture& fx = trained_small();
  auto modules = fx.modules;
  Hierarchy h(fx.model, modules);
  for (auto& m : h.modules()) m.set_perturbation(0.0);
  // The decay floor would restore a perturbation after the first step.
  std::vector<Mlp> before;
  for (const auto& m : h.modules()) before.push_back(m.policy().mean_net);
  const auto rep = h.run_offline_update(std::span(fx.data).subspan(300, 1));
  ASSERT_EQ(rep.size(), 1u);
  for (std::size_t k = 0; k < before.size(); ++k) {
    EXPECT_FALSE(rep[0][k].skipped);
    EXPECT_EQ(h.modules()[k].policy().mean_net, before[k]);
    EXPECT_EQ(h.modules()[k].steps(), 1);
  }
}

TEST(SwitchOps, Parse) {
  const auto ops = parse_switch_ops("# reconfigure\nopen 3\n\nclose 1 4 0.001 0.002  # tie\n");
  ASSERT_EQ(ops.size(), 2u);
  EXPECT_EQ(ops[0].kind, SwitchOp::Kind::Open);
  EXPECT_EQ(ops[0].branch.value, 3);
  EXPECT_EQ(ops[1].kind, SwitchOp::Kind::Close);
  EXPECT_EQ(ops[1].from.value, 1);
  EXPECT_EQ(ops[1].to.value, 4);
  EXPECT_DOUBLE_EQ(ops[1].x, 0.002);
}

TEST(SwitchOps, ParseErrorsNameTheLine) {
  for (const char* bad : {"open", "open x", "close 1 2 0.1", "toggle 1", "open 1 2"}) {
    try {
      parse_switch_ops(std::string("# header\n") + bad + "\n");
      ADD_FAILURE() << bad;
    } catch (const ParseError& e) {
      EXPECT_EQ(e.line(), 2) << bad;
    }
  }
}

std::string six_node_text() {
  return "[base]\ns_base_va = 100000\nv_base_primary_v = 13800\nv_base_secondary_v = 240\n"
         "[nodes]\n0 substation abc\n1 primary abc\n2 primary abc\n3 primary abc\n4 primary abc\n"
         "5 transformer a\n"
         "[branches]\n0 0 1 0.001 0.002\n1 1 2 0.001 0.002\n2 2 3 0.001 0.002\n3 3 4 0.001 0.002\n"
         "4 1 5 0.001 0.002\n"
         "[transformers]\n5 0\n"
         "[secondary 0]\nnode 6 customer a\nbranch 5 5 6 0.02 0.05\ncustomer 6 meter=1 pv=0\n";
}

TEST(Topology, EmptyChangeIsIdentity) {
  const FeederModel m = FeederModel::build(parse_feeder(six_node_text()));
  EXPECT_EQ(format_feeder(apply_topology_change(m, {}).description()), format_feeder(m.description()));
  const auto reopen = parse_switch_ops("open 2\nclose 2 3 0.001 0.002\n");
  EXPECT_EQ(format_feeder(apply_topology_change(m, reopen).description()), format_feeder(m.description()));
}

TEST(Topology, BranchSwapMatchesBfsOracle) {
  const FeederModel m = FeederModel::build(parse_feeder(six_node_text()));
  const auto ops = parse_switch_ops("open 1\nclose 5 3 0.002 0.004\n");
  const FeederModel after = apply_topology_change(m, ops);
  std::vector<int> pb;
  const auto parent = testing::bfs_parents(after.network(), &pb);
  EXPECT_EQ(parent, (std::vector<int>{-1, 0, 3, 5, 3, 1, 5}));
  // The new tie reuses the freed id.
  EXPECT_EQ(pb[3], 1);
  EXPECT_DOUBLE_EQ(after.network().branch(BranchId{1}).r, 0.002);
  EXPECT_EQ(after.secondaries().size(), 1u);
  for (int n = 0; n < after.node_count(); ++n) {
    const auto path = path_to_root(after, NodeId{n});
    int hops = 0;
    for (int u = n; parent[u] >= 0; u = parent[u]) ++hops;
    EXPECT_EQ(static_cast<int>(path.size()), hops) << n;
  }
}

TEST(Topology, RejectsIslandsCyclesAndSecondaryEndpoints) {
  const FeederModel m = FeederModel::build(parse_feeder(six_node_text()));
  EXPECT_THROW(apply_topology_change(m, parse_switch_ops("open 2\n")), ValidationError);
  EXPECT_THROW(apply_topology_change(m, parse_switch_ops("close 0 4 0.001 0.001\n")), ValidationError);
  EXPECT_THROW(apply_topology_change(m, parse_switch_ops("open 9\n")), ValidationError);
  EXPECT_THROW(apply_topology_change(m, parse_switch_ops("open 3\nclose 6 4 0.001 0.001\n")), ValidationError);
}

TEST(Topology, HierarchyKeepsModulesAcrossSwitch) {
  const FeederModel m = FeederModel::build(parse_feeder(six_node_text()));
  Hierarchy h(m, fresh_modules(m));
  const Mlp before = h.modules()[0].policy().mean_net;
  h.apply_topology_change(parse_switch_ops("open 3\nclose 5 4 0.001 0.002\n"));
  EXPECT_EQ(h.modules()[0].policy().mean_net, before);
  const auto parent = testing::bfs_parents(h.model().network());
  EXPECT_EQ(parent[4], 5);
}

TEST(StageStatus, Names) {
  EXPECT_EQ(to_string(StageStatus::Converged), "converged");
  EXPECT_EQ(to_string(StageStatus::IterationCap), "iteration_cap");
  EXPECT_EQ(to_string(StageStatus::Oscillation), "oscillation");
}

}  // namespace
}  // namespace hdsse
