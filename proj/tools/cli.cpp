#include "cli.hpp"

#include <omp.h>

#include <cmath>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <json.hpp>

#include "hdsse/errors.hpp"

namespace hdsse::cli {

using nlohmann::json;

namespace {

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  return f;
}

std::uint64_t module_seed(std::uint64_t seed, std::size_t k) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x41u,
                    static_cast<std::uint32_t>(k)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

void apply_threads(int threads) {
  if (threads > 0) omp_set_num_threads(threads);
}

FeederModel load_base(const CommonArgs& a) {
  if (a.feeder.empty()) throw std::invalid_argument("--feeder is required");
  return load_feeder(a.feeder);
}

void write_mape_csv(const fs::path& path, const BenchReport& r) {
  auto f = open_out(path);
  f << "method,timesteps,voltage_mape_percent,angle_mape_percent,angle_mae_rad,current_mape_percent,"
       "converged_fraction\n";
  fmt::print(f, "hierarchical,{},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g}\n", r.hierarchy.samples(),
             r.hierarchy.voltage_mape(), r.hierarchy.angle_mape(), r.hierarchy.angle_mae_rad(),
             r.hierarchy.current_mape(), r.converged_fraction());
  if (r.monolithic.samples() > 0)
    fmt::print(f, "monolithic,{},{:.9g},{:.9g},{:.9g},{:.9g},\n", r.monolithic.samples(), r.monolithic.voltage_mape(),
               r.monolithic.angle_mape(), r.monolithic.angle_mae_rad(), r.monolithic.current_mape());
}

void write_steps_csv(const fs::path& path, const BenchReport& r) {
  auto f = open_out(path);
  f << "t,iterations,status,voltage_mape_percent,final_dv\n";
  for (const auto& s : r.records)
    fmt::print(f, "{},{},{},{:.9g},{:.9g}\n", s.t, s.iterations, to_string(s.status), s.voltage_mape, s.final_dv);
}

void write_timing(const fs::path& dir, const BenchReport& r) {
  auto f = open_out(dir / "timing.csv");
  f << "kind,index,seconds\n";
  auto dump = [&](const char* kind, const std::vector<double>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) fmt::print(f, "{},{},{:.9g}\n", kind, i, v[i]);
  };
  dump("pipeline", r.pipeline_s);
  dump("layer1", r.layer1_s);
  dump("layer2", r.layer2_s);
  dump("module_inference", r.inference_s);
  dump("monolithic", r.monolithic_s);

  auto s = open_out(dir / "timing_summary.csv");
  s << "kind,count,mean_s,median_s,p95_s,max_s\n";
  auto row = [&](const char* kind, const std::vector<double>& v) {
    const SampleStats st = summarize(v);
    fmt::print(s, "{},{},{:.6g},{:.6g},{:.6g},{:.6g}\n", kind, st.count, st.mean, st.median, st.p95, st.max);
  };
  row("pipeline", r.pipeline_s);
  row("layer1", r.layer1_s);
  row("layer2", r.layer2_s);
  row("module_inference", r.inference_s);
  row("monolithic", r.monolithic_s);
  fmt::print(s, "speedup,,,{:.6g},,\n", r.speedup());
}

json state_line(const Hierarchy& h, const TimestepData& d, const TimestepResult& r) {
  json j;
  j["t"] = d.t;
  j["iterations"] = r.iterations;
  j["status"] = std::string(to_string(r.status));
  j["dv"] = r.dv_history;
  j["objective"] = r.primary.objective;
  j["primary_currents"] = std::vector<double>(r.primary.state.values.begin(), r.primary.state.values.end());
  json vt = json::array();
  for (const Complex& v : r.transformer_voltages) vt.push_back({v.real(), v.imag()});
  j["transformer_voltages"] = vt;
  json sec = json::array();
  for (const StateVector& s : r.secondary) sec.push_back(std::vector<double>(s.values.begin(), s.values.end()));
  j["secondary_currents"] = sec;
  json b = json::array();
  for (std::size_t k = 0; k < r.boundary.size(); ++k) {
    const auto& u = r.boundary[k];
    b.push_back({{"circuit", h.model().secondaries()[k].id}, {"p", u.p}, {"q", u.q}, {"var_p", u.var_p},
                 {"var_q", u.var_q}});
  }
  j["boundary"] = b;
  return j;
}

/// Runs the hierarchy over the stream, logging states when `states` is open.
BenchReport evaluate(Hierarchy& h, const EvalStream& s, std::ostream* states) {
  BenchReport rep;
  for (std::size_t t = 0; t < s.data.size(); ++t) {
    const TimestepResult r = h.run_timestep(s.data[t]);
    const JointEstimate est = h.joint_estimate(r);
    rep.hierarchy.add(est.voltages, s.truth.voltages[t], est.currents, s.truth.currents[t]);
    rep.records.push_back({s.data[t].t, r.iterations, r.status, rep.hierarchy.per_step_voltage_mape().back(),
                           r.dv_history.empty() ? 0.0 : r.dv_history.back()});
    if (r.status == StageStatus::Converged && r.iterations <= 10) ++rep.converged_within_10;
    rep.pipeline_s.push_back(r.timings.total_s);
    rep.layer1_s.push_back(r.timings.layer1_s);
    rep.layer2_s.push_back(r.timings.layer2_s);
    if (states) *states << state_line(h, s.data[t], r).dump() << '\n';
  }
  return rep;
}

}  // namespace

std::vector<AcModule> fresh_modules(const FeederModel& model, const AcConfig& ac, std::uint64_t seed) {
  std::vector<AcModule> mods;
  const auto secs = model.secondaries();
  mods.reserve(secs.size());
  for (std::size_t k = 0; k < secs.size(); ++k) mods.emplace_back(secs[k], ac, module_seed(seed, k));
  return mods;
}

ScenarioConfig resolve_scenario(const CommonArgs& a) {
  ScenarioConfig c = a.scenario.empty() ? ScenarioConfig{} : load_scenario_config(a.scenario);
  if (a.seed) c.seed = *a.seed;
  if (a.timesteps) c.timesteps = *a.timesteps;
  if (a.meter_penetration) c.meter_penetration = *a.meter_penetration;
  if (a.pv_penetration) c.pv_penetration = *a.pv_penetration;
  // Round-trip through the validating parser.
  return parse_scenario_config(format_scenario_config(c));
}

EvalStream make_stream(const FeederModel& model, const ScenarioConfig& config) {
  EvalStream s{model, config, {}, {}};
  const Profiles p = generate_profiles(model, config);
  s.truth = generate_truth(model, p);
  s.data = synthesize_measurements(model, s.truth, config);
  return s;
}

// ---------------------------------------------------------------------------

TrainResult cmd_train(const TrainArgs& args, Hierarchy* trained) {
  apply_threads(args.common.threads);
  const ScenarioConfig cfg = resolve_scenario(args.common);
  const FeederModel model = apply_metering(load_base(args.common), cfg);
  const EvalStream s = make_stream(model, cfg);
  const auto samples = training_samples(model, s.truth, s.data);

  TrainResult out;
  std::vector<AcModule> mods = fresh_modules(model, args.ac, cfg.seed);
  out.pretrain.resize(mods.size());
  const int n = static_cast<int>(mods.size());
#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < n; ++k) out.pretrain[k] = pretrain(mods[k], samples[k], args.pretrain);

  Hierarchy h(model, std::move(mods));
  const std::size_t steps = args.online_steps < 0 ? s.data.size()
                                                  : std::min(s.data.size(), static_cast<std::size_t>(args.online_steps));
  out.online = h.run_offline_update(std::span(s.data).first(steps));

  if (!args.common.checkpoints.empty()) {
    const fs::path dir = args.common.checkpoints;
    fs::create_directories(dir);
    json manifest;
    manifest["format"] = 1;
    manifest["feeder"] = args.common.feeder.filename().string();
    manifest["scenario"] = json::parse(format_scenario_config(cfg));
    json mods_j = json::array();
    for (std::size_t k = 0; k < h.modules().size(); ++k) {
      const std::string file = fmt::format("module_{}.ckpt", k);
      save_module(h.modules()[k], dir / file);
      mods_j.push_back({{"circuit", h.model().secondaries()[k].id},
                        {"file", file},
                        {"meters", h.modules()[k].meter_count()},
                        {"pretrain_validation_current_mape", out.pretrain[k].validation_current_mape},
                        {"pretrain_validation_voltage_mape", out.pretrain[k].validation_voltage_mape}});
    }
    manifest["modules"] = mods_j;
    open_out(dir / "manifest.json") << manifest.dump(2) << '\n';

    auto log = open_out(dir / "training_log.csv");
    log << "step,circuit,residual,predicted,tde,skipped\n";
    for (std::size_t t = 0; t < out.online.size(); ++t)
      for (std::size_t k = 0; k < out.online[t].size(); ++k) {
        const TrainReport& r = out.online[t][k];
        if (h.modules()[k].meter_count() == 0) continue;
        fmt::print(log, "{},{},{:.9g},{:.9g},{:.9g},{}\n", t, h.model().secondaries()[k].id, r.residual,
                   r.predicted, r.tde, r.skipped ? 1 : 0);
      }
  }
  if (trained) *trained = std::move(h);
  return out;
}

Hierarchy load_checkpoints(const fs::path& dir, const FeederModel& base, ScenarioConfig* scenario) {
  std::ifstream f(dir / "manifest.json");
  if (!f) throw std::runtime_error(fmt::format("no manifest.json in {}", dir.string()));
  const json manifest = json::parse(f);
  if (manifest.at("format").get<int>() != 1) throw std::runtime_error("unsupported checkpoint format");
  const ScenarioConfig trained = parse_scenario_config(manifest.at("scenario").dump());
  if (scenario) *scenario = trained;
  FeederModel model = apply_metering(base, trained);
  const auto& list = manifest.at("modules");
  if (list.size() != model.secondaries().size())
    throw ValidationError(fmt::format("checkpoint has {} modules, feeder has {} transformers", list.size(),
                                      model.secondaries().size()));
  std::vector<AcModule> mods;
  for (std::size_t k = 0; k < list.size(); ++k)
    mods.push_back(load_module(dir / list[k].at("file").get<std::string>(), model.secondaries()[k]));
  return Hierarchy(std::move(model), std::move(mods));
}

namespace {

/// Held-out scenario for evaluation: the checkpoint's metering and the caller's stream settings.
ScenarioConfig eval_scenario(const CommonArgs& a, const ScenarioConfig& trained) {
  if (a.meter_penetration && *a.meter_penetration != trained.meter_penetration)
    throw std::invalid_argument(fmt::format("checkpoints were trained at meter penetration {}, not {}",
                                            trained.meter_penetration, *a.meter_penetration));
  ScenarioConfig c = resolve_scenario(a);
  c.meter_penetration = trained.meter_penetration;
  c.meter_seed = trained.meter_seed;
  return c;
}

}  // namespace

BenchReport cmd_estimate(const CommonArgs& args) {
  apply_threads(args.threads);
  ScenarioConfig trained;
  Hierarchy h = load_checkpoints(args.checkpoints, load_base(args), &trained);
  const EvalStream s = make_stream(h.model(), eval_scenario(args, trained));
  fs::create_directories(args.out);
  auto states = open_out(args.out / "states.jsonl");
  BenchReport rep = evaluate(h, s, &states);
  write_mape_csv(args.out / "mape.csv", rep);
  write_steps_csv(args.out / "steps.csv", rep);
  return rep;
}

BenchReport cmd_bench(const CommonArgs& args, const BenchOptions& options) {
  apply_threads(args.threads);
  ScenarioConfig trained;
  Hierarchy h = load_checkpoints(args.checkpoints, load_base(args), &trained);
  const EvalStream s = make_stream(h.model(), eval_scenario(args, trained));
  BenchReport rep = run_bench(h, s.data, s.truth, options);
  fs::create_directories(args.out);
  write_mape_csv(args.out / "mape.csv", rep);
  write_steps_csv(args.out / "steps.csv", rep);
  write_timing(args.out, rep);
  return rep;
}

std::vector<SweepRow> cmd_sweep(const TrainArgs& train, const CommonArgs& eval, std::vector<double> penetrations) {
  apply_threads(eval.threads);
  std::vector<SweepRow> rows;
  for (double pen : penetrations) {
    TrainArgs t = train;
    t.common.meter_penetration = pen;
    t.common.checkpoints.clear();
    Hierarchy h(FeederModel{}, {});
    cmd_train(t, &h);
    ScenarioConfig trained = resolve_scenario(t.common);
    CommonArgs e = eval;
    e.meter_penetration.reset();
    const EvalStream s = make_stream(h.model(), eval_scenario(e, trained));
    h.reset_warm_start();
    const BenchReport rep = evaluate(h, s, nullptr);
    SweepRow row;
    row.meter_penetration = pen;
    row.metered = static_cast<int>(select_metered(h.model(), pen, trained.meter_seed).size());
    row.voltage_mape = rep.hierarchy.voltage_mape();
    const auto per = rep.hierarchy.per_step_voltage_mape();
    double m = 0, v = 0;
    for (double x : per) m += x;
    m /= static_cast<double>(per.size());
    for (double x : per) v += (x - m) * (x - m);
    row.voltage_mape_se = per.size() > 1 ? std::sqrt(v / static_cast<double>(per.size() - 1) /
                                                     static_cast<double>(per.size()))
                                         : 0.0;
    row.angle_mae_rad = rep.hierarchy.angle_mae_rad();
    row.current_mape = rep.hierarchy.current_mape();
    row.converged_fraction = rep.converged_fraction();
    rows.push_back(row);
  }
  fs::create_directories(eval.out);
  auto f = open_out(eval.out / "sweep.csv");
  f << "meter_penetration,metered_customers,voltage_mape_percent,voltage_mape_se,angle_mae_rad,"
       "current_mape_percent,converged_fraction\n";
  for (const auto& r : rows)
    fmt::print(f, "{:.9g},{},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g}\n", r.meter_penetration, r.metered, r.voltage_mape,
               r.voltage_mape_se, r.angle_mae_rad, r.current_mape, r.converged_fraction);
  return rows;
}

TopologyReport cmd_topology(const CommonArgs& args, const fs::path& switch_file) {
  apply_threads(args.threads);
  const auto ops = load_switch_ops(switch_file);
  ScenarioConfig trained;
  Hierarchy h = load_checkpoints(args.checkpoints, load_base(args), &trained);
  const ScenarioConfig cfg = eval_scenario(args, trained);

  TopologyReport rep;
  const EvalStream before = make_stream(h.model(), cfg);
  rep.before = evaluate(h, before, nullptr);

  h.apply_topology_change(ops);
  const EvalStream after = make_stream(h.model(), cfg);
  fs::create_directories(args.out);
  auto states = open_out(args.out / "states_after.jsonl");
  rep.after = evaluate(h, after, &states);

  auto f = open_out(args.out / "topology.csv");
  f << "phase,timesteps,voltage_mape_percent,angle_mae_rad,current_mape_percent,converged_fraction\n";
  for (const auto& [name, r] : {std::pair{"before", &rep.before}, std::pair{"after", &rep.after}})
    fmt::print(f, "{},{},{:.9g},{:.9g},{:.9g},{:.9g}\n", name, r->hierarchy.samples(), r->hierarchy.voltage_mape(),
               r->hierarchy.angle_mae_rad(), r->hierarchy.current_mape(), r->converged_fraction());
  save_feeder(h.model(), args.out / "feeder_after.model");
  return rep;
}

void cmd_gen_feeder(const fs::path& out, std::uint64_t seed) { save_feeder(generate_feeder60(seed), out); }

// ---------------------------------------------------------------------------

int run(int argc, char** argv) {
  CLI::App app{"Hierarchical distribution-system state estimation"};
  app.require_subcommand(1);

  CommonArgs common;
  TrainArgs train;
  BenchOptions bench;
  fs::path switch_file;
  std::uint64_t feeder_seed = 2024;
  fs::path feeder_out;
  std::vector<double> penetrations{0.1, 0.25, 0.5, 0.75, 1.0};
  int eval_timesteps = 0;
  std::uint64_t eval_seed = 0;

  auto add_common = [&](CLI::App* c, bool needs_checkpoints) {
    c->add_option("--feeder", common.feeder, "Feeder model file")->required()->check(CLI::ExistingFile);
    c->add_option("--scenario", common.scenario, "Scenario JSON")->check(CLI::ExistingFile);
    auto* ck = c->add_option("--checkpoints", common.checkpoints, "Checkpoint directory");
    if (needs_checkpoints) ck->required()->check(CLI::ExistingDirectory);
    c->add_option("--seed", common.seed, "Scenario seed");
    c->add_option("--timesteps", common.timesteps, "Stream length")->check(CLI::PositiveNumber);
    c->add_option("--meter-penetration", common.meter_penetration, "Smart-meter fraction")
        ->check(CLI::Range(0.0, 1.0));
    c->add_option("--pv-penetration", common.pv_penetration, "Peak PV over peak load")->check(CLI::Range(0.0, 10.0));
    c->add_option("--threads", common.threads, "OpenMP threads (0 = default)")->check(CLI::NonNegativeNumber);
    c->add_option("--out", common.out, "Output directory");
  };
  auto add_train_opts = [&](CLI::App* c) {
    c->add_option("--online-steps", train.online_steps, "Online update steps (-1 = whole stream)");
    c->add_option("--epochs", train.pretrain.epochs, "Pretraining epochs")->check(CLI::PositiveNumber);
  };

  auto* c_train = app.add_subcommand("train", "Pretrain and update one module per transformer");
  add_common(c_train, false);
  add_train_opts(c_train);
  auto* c_est = app.add_subcommand("estimate", "Run the hierarchy over a held-out stream");
  add_common(c_est, true);
  auto* c_bench = app.add_subcommand("bench", "Estimate, time, and compare with a joint WLS");
  add_common(c_bench, true);
  c_bench->add_option("--monolithic-timesteps", bench.monolithic_timesteps, "Timesteps solved by the joint WLS");
  c_bench->add_option("--repetitions", bench.inference_repetitions, "Timed module inference calls");
  auto* c_sweep = app.add_subcommand("sweep", "Train and estimate across meter penetrations");
  add_common(c_sweep, false);
  add_train_opts(c_sweep);
  c_sweep->add_option("--penetrations", penetrations, "Meter penetrations")->delimiter(',');
  c_sweep->add_option("--eval-seed", eval_seed, "Held-out stream seed (default: seed + 1)");
  c_sweep->add_option("--eval-timesteps", eval_timesteps, "Held-out stream length (default: --timesteps)");
  auto* c_topo = app.add_subcommand("topology", "Switch primary branches and re-estimate");
  add_common(c_topo, true);
  c_topo->add_option("--switch", switch_file, "Switch operations file")->required()->check(CLI::ExistingFile);
  auto* c_gen = app.add_subcommand("gen-feeder", "Write the bundled synthetic feeder");
  c_gen->add_option("--out", feeder_out, "Model file")->required();
  c_gen->add_option("--seed", feeder_seed, "Generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*c_train) {
      train.common = common;
      const TrainResult r = cmd_train(train);
      double cur = 0, volt = 0;
      for (const auto& p : r.pretrain) {
        cur += p.validation_current_mape;
        volt += p.validation_voltage_mape;
      }
      const auto n = static_cast<double>(std::max<std::size_t>(r.pretrain.size(), 1));
      fmt::print("trained {} modules; validation current MAPE {:.3f}%, voltage MAPE {:.4f}%; {} online steps\n",
                 r.pretrain.size(), cur / n, volt / n, r.online.size());
    } else if (*c_est) {
      const BenchReport r = cmd_estimate(common);
      fmt::print("voltage MAPE {:.4f}%  angle MAE {:.3g} rad  converged {:.1f}%\n", r.hierarchy.voltage_mape(),
                 r.hierarchy.angle_mae_rad(), 100 * r.converged_fraction());
    } else if (*c_bench) {
      const BenchReport r = cmd_bench(common, bench);
      fmt::print("voltage MAPE {:.4f}% (joint WLS {:.4f}%)  median pipeline {:.3g} s  joint WLS {:.3g} s  "
                 "speedup {:.1f}x  module inference median {:.3g} s\n",
                 r.hierarchy.voltage_mape(), r.monolithic.voltage_mape(), summarize(r.pipeline_s).median,
                 summarize(r.monolithic_s).median, r.speedup(), summarize(r.inference_s).median);
    } else if (*c_sweep) {
      train.common = common;
      train.common.out.clear();
      CommonArgs eval = common;
      eval.seed = eval_seed ? eval_seed : resolve_scenario(common).seed + 1;
      if (eval_timesteps > 0) eval.timesteps = eval_timesteps;
      for (const SweepRow& r : cmd_sweep(train, eval, penetrations))
        fmt::print("penetration {:.2f}: voltage MAPE {:.4f}% +- {:.4f}\n", r.meter_penetration, r.voltage_mape,
                   r.voltage_mape_se);
    } else if (*c_topo) {
      const TopologyReport r = cmd_topology(common, switch_file);
      fmt::print("voltage MAPE before {:.4f}% after {:.4f}%; converged before {:.1f}% after {:.1f}%\n",
                 r.before.hierarchy.voltage_mape(), r.after.hierarchy.voltage_mape(),
                 100 * r.before.converged_fraction(), 100 * r.after.converged_fraction());
    } else if (*c_gen) {
      cmd_gen_feeder(feeder_out, feeder_seed);
    }
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}

}  // namespace hdsse::cli
