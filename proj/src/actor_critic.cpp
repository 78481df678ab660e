#include "hdsse/actor_critic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "hdsse/errors.hpp"
#include "hdsse/metrics.hpp"
#include "hdsse/powerflow.hpp"

namespace hdsse {

namespace {

std::vector<int> sizes(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}

// Minibatch Adam on a squared-error objective 0.5 |net(x) - y|^2 averaged over
// samples and outputs. Returns the full-set loss after each epoch.
std::vector<double> fit_regression(Mlp& net, const std::vector<Eigen::VectorXd>& x,
                                   const std::vector<Eigen::VectorXd>& y, int epochs, int batch,
                                   double lr, Rng& rng) {
  std::vector<double> losses;
  if (x.empty() || epochs <= 0) return losses;
  Adam opt(net.parameter_count(), lr);
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  const double out_dim = net.output_size();
  for (int e = 0; e < epochs; ++e) {
    // Cosine decay keeps late epochs from bouncing on minibatch noise.
    opt.set_learning_rate(lr * (0.05 + 0.95 * 0.5 * (1.0 + std::cos(std::numbers::pi * e / epochs))));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch));
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.parameter_count()));
      for (std::size_t k = start; k < end; ++k) {
        const auto i = order[k];
        const Eigen::VectorXd err = net.forward(x[i]) - y[i];
        grad += net.backward(x[i], err / out_dim).params;
      }
      opt.step(net.parameters(), grad / static_cast<double>(end - start));
    }
    double loss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) loss += 0.5 * (net.forward(x[i]) - y[i]).squaredNorm() / out_dim;
    losses.push_back(loss / static_cast<double>(x.size()));
  }
  return losses;
}

// Gaussian negative log-likelihood fit of a log-variance network to fixed residuals.
void fit_logvar(Mlp& net, const std::vector<Eigen::VectorXd>& x, const std::vector<Eigen::VectorXd>& resid,
                int epochs, int batch, double lr, Rng& rng) {
  if (x.empty() || epochs <= 0) return;
  Adam opt(net.parameter_count(), lr);
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  const double out_dim = net.output_size();
  for (int e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch));
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.parameter_count()));
      for (std::size_t k = start; k < end; ++k) {
        const auto i = order[k];
        const Eigen::VectorXd lv = net.forward(x[i]);
        const Eigen::VectorXd g = 0.5 * (1.0 - (resid[i].array().square() * (-lv.array()).exp()));
        grad += net.backward(x[i], g / out_dim).params;
      }
      opt.step(net.parameters(), grad / static_cast<double>(end - start));
    }
  }
}

void write_vector(std::ostream& out, const char* tag, const Eigen::VectorXd& v) {
  out << tag << ' ' << v.size();
  for (double x : v) fmt::print(out, " {:.17g}", x);
  out << '\n';
}

Eigen::VectorXd read_vector(std::istream& in, const char* tag) {
  std::string t;
  Eigen::Index n = 0;
  if (!(in >> t >> n) || t != tag || n < 0) throw ParseError(fmt::format("expected '{}' vector", tag), 0);
  Eigen::VectorXd v(n);
  for (auto& x : v)
    if (!(in >> x)) throw ParseError(fmt::format("truncated '{}' vector", tag), 0);
  return v;
}

template <typename T>
T read_field(std::istream& in, const char* key) {
  std::string t;
  T v{};
  if (!(in >> t >> v) || t != key) throw ParseError(fmt::format("expected field '{}'", key), 0);
  return v;
}

}  // namespace

AcModule::AcModule(SecondaryCircuit circuit, AcConfig config, std::uint64_t seed)
    : circuit_(std::move(circuit)), config_(std::move(config)), rng_(seed) {
  if (!(config_.actor_lr > 0) || !(config_.critic_lr > 0))
    throw std::invalid_argument("learning rates must be positive");
  if (!(config_.u_max >= 0)) throw std::invalid_argument("perturbation half-width must be non-negative");
  metered_ = circuit_.metered_customers();
  const int d = circuit_.state_dim();
  policy_.mean_net = Mlp::xavier(sizes(input_size(), config_.hidden, d), rng_);
  policy_.logvar_net = Mlp::xavier(sizes(input_size(), config_.hidden, d), rng_);
  // Start with a uniform, input-independent spread.
  policy_.logvar_net.scale_output_layer(0.0);
  policy_.logvar_net.set_output_bias(config_.initial_logvar);
  critic_ = Mlp::xavier(sizes(input_size(), config_.hidden, 1), rng_);
  scaler_ = Standardizer::identity(input_size());
  u_current_ = config_.u_max;
}

void AcModule::observe(const TrainReport& report, double half_life) {
  if (report.skipped) return;
  if (!ema_started_) {
    tde_ema_ = std::abs(report.tde);
    residual_ema_ = report.residual;
    ema_started_ = true;
    return;
  }
  const double a = 1.0 - std::exp2(-1.0 / half_life);
  tde_ema_ += a * (std::abs(report.tde) - tde_ema_);
  residual_ema_ += a * (report.residual - residual_ema_);
}

Eigen::VectorXd AcModule::features(const AcInput& input) const {
  const auto m = static_cast<std::size_t>(meter_count());
  if (input.meter_voltage.size() != m || input.meter_energy.size() != m)
    throw DimensionError(fmt::format("circuit {} expects {} meter readings, got {}/{}", circuit_.id, m,
                                     input.meter_voltage.size(), input.meter_energy.size()));
  Eigen::VectorXd c(input_size());
  for (std::size_t i = 0; i < m; ++i) {
    c[static_cast<Eigen::Index>(i)] = input.meter_voltage[i];
    c[static_cast<Eigen::Index>(m + i)] = input.meter_energy[i] / config_.meter_interval_h;
  }
  c[static_cast<Eigen::Index>(2 * m)] = std::abs(input.v_transformer);
  c[static_cast<Eigen::Index>(2 * m + 1)] = std::arg(input.v_transformer);
  return c;
}

// ---------------------------------------------------------------------------

StateVector infer_mean(const AcModule& module, const AcInput& input) {
  return StateVector(module.policy().mean_net.forward(module.standardized(input)));
}

StateVector infer_states(AcModule& module, const AcInput& input, InferMode mode) {
  if (mode == InferMode::Mean) return infer_mean(module, input);
  return StateVector(policy_sample(module.policy(), module.standardized(input), module.rng()));
}

std::vector<Complex> circuit_voltages(const SecondaryCircuit& circuit, Complex v_transformer,
                                      const StateVector& states) {
  return forward_sweep(circuit.network, v_transformer, states);
}

BoundaryUp boundary_up(const AcModule& module, Complex v, const StateVector& states,
                       const Eigen::VectorXd& state_variance) {
  const auto& circuit = module.circuit();
  require_state_dim(states, circuit.network);
  if (state_variance.size() != states.values.size())
    throw DimensionError("state variance length does not match the state");
  Complex head = 0.0;
  double var_re = 0.0, var_im = 0.0;
  for (BranchId b : circuit.head_branches()) {
    head += states.current(b);
    var_re += state_variance[2 * b.value];
    var_im += state_variance[2 * b.value + 1];
  }
  const Complex s = v * std::conj(head);
  const double v2 = std::norm(v);
  constexpr double tiny = std::numeric_limits<double>::min();
  return {s.real(), s.imag(), std::max(v2 * var_re, tiny), std::max(v2 * var_im, tiny)};
}

BoundaryUp boundary_up(const AcModule& module, const AcInput& input, const StateVector& states) {
  const auto out = policy_eval(module.policy(), module.standardized(input));
  return boundary_up(module, input.v_transformer, states, out.variance);
}

double realized_residual(const AcModule& module, const AcInput& input, const StateVector& states) {
  if (module.meter_count() == 0)
    throw std::domain_error(fmt::format("circuit {} has no smart meters; residual undefined", module.circuit().id));
  const auto& circuit = module.circuit();
  const auto v = circuit_voltages(circuit, input.v_transformer, states);
  double r = 0.0;
  const auto metered = module.metered();
  for (std::size_t k = 0; k < metered.size(); ++k) {
    const NodeId local = circuit.customer_local[metered[k]];
    const double d = std::abs(v[local.index()]) - input.meter_voltage.at(k);
    r += d * d;
  }
  return r;
}

namespace {
void clip_norm(Eigen::VectorXd& step, double max_norm) {
  if (max_norm <= 0) return;
  const double n = step.norm();
  if (n > max_norm) step *= max_norm / n;
}
}  // namespace

TrainReport train_step(AcModule& module, const AcInput& input) {
  TrainReport rep;
  const Eigen::VectorXd c = module.standardized(input);
  auto& policy = module.policy_;
  const PolicyOutput pi = policy_eval(policy, c);
  const Eigen::Index d = pi.mean.size();

  // Step B-I: policy sample plus a uniform exploratory perturbation.
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform(-module.u_current_, module.u_current_);
  Eigen::VectorXd x(d), u(d);
  for (Eigen::Index i = 0; i < d; ++i) x[i] = pi.mean[i] + std::sqrt(pi.variance[i]) * normal(module.rng_);
  for (Eigen::Index i = 0; i < d; ++i) u[i] = module.u_current_ > 0 ? uniform(module.rng_) : 0.0;
  x += u;

  rep.predicted = module.critic_.forward(c)[0];
  rep.residual = realized_residual(module, input, StateVector(x));
  module.u_current_ = std::max(module.config_.u_floor, module.u_current_ * module.config_.u_decay);
  ++module.steps_;
  if (!std::isfinite(rep.residual) || !std::isfinite(rep.predicted)) {
    rep.skipped = true;
    return rep;
  }
  rep.tde = rep.predicted - rep.residual;

  // Critic: descend on the prediction error r - r_hat.
  const double critic_err = rep.residual - rep.predicted;
  if (critic_err != 0.0) {
    Eigen::VectorXd g = module.critic_.backward(c, Eigen::VectorXd::Constant(1, 1.0)).params;
    g *= module.config_.critic_lr * critic_err;
    clip_norm(g, module.config_.max_step_norm);
    auto p = module.critic_.parameters();
    for (std::size_t i = 0; i < p.size(); ++i) p[i] += g[static_cast<Eigen::Index>(i)];
  }

  // Actor: log-density gradients at mu + u are proportional to u, and vanish with it.
  if (rep.tde != 0.0 && u.cwiseAbs().maxCoeff() > 0.0) {
    const auto at_u = policy_logdensity_and_grads(policy, c, pi.mean + u);
    const auto at_mu = policy_logdensity_and_grads(policy, c, pi.mean);
    const double step = module.config_.actor_lr * rep.tde;
    Eigen::VectorXd d_theta = step * at_u.score_mean_params;
    Eigen::VectorXd d_gamma = step * (at_u.score_logvar_params - at_mu.score_logvar_params);
    clip_norm(d_theta, module.config_.max_step_norm);
    clip_norm(d_gamma, module.config_.max_step_norm);
    auto theta = policy.mean_net.parameters();
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += d_theta[static_cast<Eigen::Index>(i)];
    auto gamma = policy.logvar_net.parameters();
    for (std::size_t i = 0; i < gamma.size(); ++i) gamma[i] += d_gamma[static_cast<Eigen::Index>(i)];
  }
  return rep;
}

// ---------------------------------------------------------------------------

PretrainReport pretrain(AcModule& module, std::span<const AcSample> dataset, const PretrainOptions& opt) {
  if (dataset.empty()) throw std::invalid_argument("pretrain needs at least one sample");
  PretrainReport rep;
  const std::size_t n = dataset.size();
  std::size_t n_val = n >= 10 ? static_cast<std::size_t>(std::ceil(opt.validation_fraction * static_cast<double>(n))) : 0;
  n_val = std::min(n_val, n - 1);
  const std::size_t n_train = n - n_val;
  rep.train_samples = n_train;
  rep.validation_samples = n_val;

  std::vector<Eigen::VectorXd> raw(n), targets(n);
  for (std::size_t i = 0; i < n; ++i) {
    require_state_dim(dataset[i].truth, module.circuit().network);
    raw[i] = module.features(dataset[i].input);
    targets[i] = dataset[i].truth.values;
  }
  module.input_scaler() = Standardizer::fit(std::span(raw).first(n_train));
  std::vector<Eigen::VectorXd> c(n);
  for (std::size_t i = 0; i < n; ++i) c[i] = module.input_scaler().apply(raw[i]);
  const std::vector<Eigen::VectorXd> c_train(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(n_train));

  Rng shuffle_rng(module.rng()());

  // Mean network in standardized output space, then folded back to p.u.
  const Standardizer out_scale = Standardizer::fit(std::span(targets).first(n_train));
  std::vector<Eigen::VectorXd> y(n_train);
  for (std::size_t i = 0; i < n_train; ++i) y[i] = out_scale.apply(targets[i]);
  auto& mean_net = module.policy().mean_net;
  rep.epoch_loss = fit_regression(mean_net, c_train, y, opt.epochs, opt.batch, opt.learning_rate, shuffle_rng);
  mean_net.fold_output_affine(out_scale.scale, out_scale.mean);

  // Log-variance network on the remaining training residuals.
  std::vector<Eigen::VectorXd> resid(n_train);
  Eigen::VectorXd var = Eigen::VectorXd::Zero(module.state_dim());
  for (std::size_t i = 0; i < n_train; ++i) {
    resid[i] = targets[i] - mean_net.forward(c[i]);
    var += resid[i].cwiseAbs2();
  }
  var /= static_cast<double>(n_train);
  auto& lv_net = module.policy().logvar_net;
  lv_net.scale_output_layer(0.0);
  lv_net.set_output_bias(Eigen::VectorXd(var.cwiseMax(1e-300).array().log()));
  fit_logvar(lv_net, c_train, resid, opt.logvar_epochs, opt.batch, opt.learning_rate, shuffle_rng);

  // Critic on realized residuals of the mean estimate.
  if (module.meter_count() > 0) {
    std::vector<Eigen::VectorXd> r(n_train);
    for (std::size_t i = 0; i < n_train; ++i)
      r[i] = Eigen::VectorXd::Constant(1, realized_residual(module, dataset[i].input, StateVector(mean_net.forward(c[i]))));
    const Standardizer r_scale = Standardizer::fit(r);
    for (auto& v : r) v = r_scale.apply(v);
    fit_regression(module.critic(), c_train, r, opt.critic_epochs, opt.batch, opt.learning_rate, shuffle_rng);
    module.critic().fold_output_affine(r_scale.scale, r_scale.mean);
  }

  if (n_val > 0) {
    std::vector<double> i_est, i_true, v_est, v_true;
    for (std::size_t i = n_train; i < n; ++i) {
      const StateVector est(mean_net.forward(c[i]));
      const auto& truth = dataset[i].truth;
      for (int b = 0; b < truth.branch_count(); ++b) {
        i_est.push_back(std::abs(est.current(BranchId{b})));
        i_true.push_back(std::abs(truth.current(BranchId{b})));
      }
      const Complex vt = dataset[i].input.v_transformer;
      const auto ve = circuit_voltages(module.circuit(), vt, est);
      const auto vtr = circuit_voltages(module.circuit(), vt, truth);
      for (std::size_t k = 1; k < ve.size(); ++k) {
        v_est.push_back(std::abs(ve[k]));
        v_true.push_back(std::abs(vtr[k]));
      }
    }
    rep.validation_current_mape = mape_detail(i_est, i_true, 1e-6).percent;
    rep.validation_voltage_mape = mape(v_est, v_true);
  }
  return rep;
}

// ---------------------------------------------------------------------------

void AcModule::save(std::ostream& out) const {
  out << "acmodule 1\n";
  fmt::print(out, "circuit {}\nstate_dim {}\nmeters {}\n", circuit_.id, state_dim(), meter_count());
  fmt::print(out, "hidden {}", config_.hidden.size());
  for (int h : config_.hidden) fmt::print(out, " {}", h);
  out << '\n';
  fmt::print(out, "actor_lr {:.17g}\ncritic_lr {:.17g}\nu_max {:.17g}\nu_decay {:.17g}\nu_floor {:.17g}\n",
             config_.actor_lr, config_.critic_lr, config_.u_max, config_.u_decay, config_.u_floor);
  fmt::print(out, "initial_logvar {:.17g}\nmeter_interval_h {:.17g}\nmax_step_norm {:.17g}\n",
             config_.initial_logvar, config_.meter_interval_h, config_.max_step_norm);
  fmt::print(out, "u_current {:.17g}\nsteps {}\ntde_ema {:.17g}\nresidual_ema {:.17g}\nema_started {}\n",
             u_current_, steps_, tde_ema_, residual_ema_, ema_started_ ? 1 : 0);
  fmt::print(out, "logvar_min {:.17g}\nlogvar_max {:.17g}\n", policy_.logvar_min, policy_.logvar_max);
  write_vector(out, "input_mean", scaler_.mean);
  write_vector(out, "input_scale", scaler_.scale);
  out << "mean_net\n";
  write_mlp(out, policy_.mean_net);
  out << "logvar_net\n";
  write_mlp(out, policy_.logvar_net);
  out << "critic\n";
  write_mlp(out, critic_);
  out << "rng " << rng_ << '\n';
}

AcModule AcModule::load(std::istream& in, const SecondaryCircuit& circuit) {
  std::string tag;
  int version = 0;
  if (!(in >> tag >> version) || tag != "acmodule" || version != 1)
    throw ParseError("not an acmodule v1 checkpoint", 0);
  const int id = read_field<int>(in, "circuit");
  const int dim = read_field<int>(in, "state_dim");
  const int meters = read_field<int>(in, "meters");
  AcModule m;
  m.circuit_ = circuit;
  m.metered_ = circuit.metered_customers();
  if (id != circuit.id || dim != circuit.state_dim() || meters != m.meter_count())
    throw ValidationError(fmt::format("checkpoint for circuit {} (dim {}, {} meters) does not match circuit {}",
                                      id, dim, meters, circuit.id));
  const auto nh = read_field<std::size_t>(in, "hidden");
  m.config_.hidden.resize(nh);
  for (int& h : m.config_.hidden)
    if (!(in >> h)) throw ParseError("truncated hidden sizes", 0);
  m.config_.actor_lr = read_field<double>(in, "actor_lr");
  m.config_.critic_lr = read_field<double>(in, "critic_lr");
  m.config_.u_max = read_field<double>(in, "u_max");
  m.config_.u_decay = read_field<double>(in, "u_decay");
  m.config_.u_floor = read_field<double>(in, "u_floor");
  m.config_.initial_logvar = read_field<double>(in, "initial_logvar");
  m.config_.meter_interval_h = read_field<double>(in, "meter_interval_h");
  m.config_.max_step_norm = read_field<double>(in, "max_step_norm");
  m.u_current_ = read_field<double>(in, "u_current");
  m.steps_ = read_field<long>(in, "steps");
  m.tde_ema_ = read_field<double>(in, "tde_ema");
  m.residual_ema_ = read_field<double>(in, "residual_ema");
  m.ema_started_ = read_field<int>(in, "ema_started") != 0;
  m.policy_.logvar_min = read_field<double>(in, "logvar_min");
  m.policy_.logvar_max = read_field<double>(in, "logvar_max");
  m.scaler_.mean = read_vector(in, "input_mean");
  m.scaler_.scale = read_vector(in, "input_scale");
  auto expect = [&](const char* t) {
    std::string s;
    if (!(in >> s) || s != t) throw ParseError(fmt::format("expected section '{}'", t), 0);
  };
  expect("mean_net");
  m.policy_.mean_net = read_mlp(in);
  expect("logvar_net");
  m.policy_.logvar_net = read_mlp(in);
  expect("critic");
  m.critic_ = read_mlp(in);
  expect("rng");
  if (!(in >> m.rng_)) throw ParseError("bad rng state", 0);
  if (m.policy_.mean_net.input_size() != m.input_size() || m.policy_.mean_net.output_size() != dim ||
      m.scaler_.mean.size() != m.input_size())
    throw ValidationError(fmt::format("checkpoint for circuit {} has inconsistent network shapes", id));
  return m;
}

void save_module(const AcModule& module, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  module.save(out);
}

AcModule load_module(const std::filesystem::path& path, const SecondaryCircuit& circuit) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open {}", path.string()), 0);
  return AcModule::load(in, circuit);
}

}  // namespace hdsse
