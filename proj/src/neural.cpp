#include "hdsse/neural.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <string>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "hdsse/errors.hpp"

namespace hdsse {

namespace {

using MatrixMap = Eigen::Map<const Eigen::MatrixXd>;
using VectorMap = Eigen::Map<const Eigen::VectorXd>;

void require_size(Eigen::Index got, int want, const char* what) {
  if (got != want)
    throw DimensionError(fmt::format("{}: expected length {}, got {}", what, want, got));
}

}  // namespace

Mlp::Mlp(std::vector<int> layer_sizes) : sizes_(std::move(layer_sizes)) {
  if (sizes_.size() < 2) throw std::invalid_argument("an Mlp needs at least two layer sizes");
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    if (sizes_[l] <= 0 || sizes_[l + 1] <= 0) throw std::invalid_argument("layer sizes must be positive");
    offsets_.push_back(total);
    total += static_cast<std::size_t>((sizes_[l] + 1) * sizes_[l + 1]);
  }
  params_.assign(total, 0.0);
}

Mlp Mlp::xavier(std::vector<int> layer_sizes, Rng& rng) {
  Mlp net(std::move(layer_sizes));
  for (std::size_t l = 0; l + 1 < net.sizes_.size(); ++l) {
    const int n_in = net.sizes_[l];
    const int n_out = net.sizes_[l + 1];
    const double limit = std::sqrt(6.0 / (n_in + n_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    double* w = net.params_.data() + net.offsets_[l];
    for (int i = 0; i < n_in * n_out; ++i) w[i] = dist(rng);
  }
  return net;
}

void Mlp::scale_output_layer(double factor) {
  const std::size_t first = offsets_.back();
  for (std::size_t i = first; i < params_.size(); ++i) params_[i] *= factor;
}

void Mlp::set_output_bias(double value) {
  const int n_out = sizes_.back();
  for (std::size_t i = params_.size() - static_cast<std::size_t>(n_out); i < params_.size(); ++i)
    params_[i] = value;
}

void Mlp::set_output_bias(const Eigen::VectorXd& values) {
  require_size(values.size(), output_size(), "output bias");
  const std::size_t first = params_.size() - static_cast<std::size_t>(output_size());
  for (int i = 0; i < output_size(); ++i) params_[first + static_cast<std::size_t>(i)] = values[i];
}

void Mlp::fold_output_affine(const Eigen::VectorXd& scale, const Eigen::VectorXd& shift) {
  require_size(scale.size(), output_size(), "output scale");
  require_size(shift.size(), output_size(), "output shift");
  const int n_out = sizes_.back();
  const int n_in = sizes_[sizes_.size() - 2];
  Eigen::Map<Eigen::MatrixXd> w(params_.data() + offsets_.back(), n_out, n_in);
  Eigen::Map<Eigen::VectorXd> b(params_.data() + offsets_.back() + n_in * n_out, n_out);
  w = scale.asDiagonal() * w;
  b = shift + scale.cwiseProduct(b);
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& input) const {
  require_size(input.size(), input_size(), "Mlp::forward input");
  Eigen::VectorXd a = input;
  const std::size_t layers = sizes_.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const int n_in = sizes_[l];
    const int n_out = sizes_[l + 1];
    const double* p = params_.data() + offsets_[l];
    Eigen::VectorXd z = MatrixMap(p, n_out, n_in) * a + VectorMap(p + n_in * n_out, n_out);
    a = (l + 1 < layers) ? Eigen::VectorXd(z.array().tanh()) : z;
  }
  return a;
}

Mlp::Gradients Mlp::backward(const Eigen::VectorXd& input, const Eigen::VectorXd& output_grad) const {
  require_size(input.size(), input_size(), "Mlp::backward input");
  require_size(output_grad.size(), output_size(), "Mlp::backward output_grad");
  const std::size_t layers = sizes_.size() - 1;
  std::vector<Eigen::VectorXd> acts;
  acts.reserve(layers + 1);
  acts.push_back(input);
  for (std::size_t l = 0; l < layers; ++l) {
    const int n_in = sizes_[l];
    const int n_out = sizes_[l + 1];
    const double* p = params_.data() + offsets_[l];
    Eigen::VectorXd z = MatrixMap(p, n_out, n_in) * acts.back() + VectorMap(p + n_in * n_out, n_out);
    acts.push_back((l + 1 < layers) ? Eigen::VectorXd(z.array().tanh()) : z);
  }

  Gradients g;
  g.params = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params_.size()));
  Eigen::VectorXd delta = output_grad;
  for (std::size_t l = layers; l-- > 0;) {
    const int n_in = sizes_[l];
    const int n_out = sizes_[l + 1];
    if (l + 1 < layers) delta.array() *= 1.0 - acts[l + 1].array().square();
    const auto off = static_cast<Eigen::Index>(offsets_[l]);
    Eigen::Map<Eigen::MatrixXd>(g.params.data() + off, n_out, n_in) = delta * acts[l].transpose();
    g.params.segment(off + n_in * n_out, n_out) = delta;
    delta = MatrixMap(params_.data() + offsets_[l], n_out, n_in).transpose() * delta;
  }
  g.input = std::move(delta);
  return g;
}

Eigen::VectorXd mlp_forward(const Mlp& net, const Eigen::VectorXd& input) { return net.forward(input); }

Mlp::Gradients mlp_backward(const Mlp& net, const Eigen::VectorXd& input,
                            const Eigen::VectorXd& output_grad) {
  return net.backward(input, output_grad);
}

// ---------------------------------------------------------------------------
// Policy

PolicyOutput policy_eval(const GaussianPolicy& policy, const Eigen::VectorXd& c) {
  PolicyOutput out;
  out.mean = policy.mean_net.forward(c);
  const Eigen::VectorXd lv = policy.logvar_net.forward(c);
  out.variance = lv.cwiseMax(policy.logvar_min).cwiseMin(policy.logvar_max).array().exp();
  return out;
}

Eigen::VectorXd policy_sample(const GaussianPolicy& policy, const Eigen::VectorXd& c, Rng& rng) {
  const PolicyOutput p = policy_eval(policy, c);
  std::normal_distribution<double> normal;
  Eigen::VectorXd x(p.mean.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = p.mean[i] + std::sqrt(p.variance[i]) * normal(rng);
  return x;
}

PolicyGradients policy_logdensity_and_grads(const GaussianPolicy& policy, const Eigen::VectorXd& c,
                                            const Eigen::VectorXd& x) {
  require_size(x.size(), policy.state_size(), "policy sample");
  const Eigen::VectorXd mean = policy.mean_net.forward(c);
  const Eigen::VectorXd lv_raw = policy.logvar_net.forward(c);
  const auto dim = mean.size();

  Eigen::VectorXd dmean(dim), dlogvar(dim);
  double mahalanobis = 0.0;
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < dim; ++i) {
    const double lv = std::clamp(lv_raw[i], policy.logvar_min, policy.logvar_max);
    const double inv_var = std::exp(-lv);
    const double d = x[i] - mean[i];
    mahalanobis += d * d * inv_var;
    log_det += lv;
    dmean[i] = d * inv_var;
    const bool inside = lv_raw[i] > policy.logvar_min && lv_raw[i] < policy.logvar_max;
    dlogvar[i] = inside ? 0.5 * (d * d * inv_var - 1.0) : 0.0;
  }

  PolicyGradients g;
  g.mahalanobis = mahalanobis;
  g.log_density = -0.5 * (mahalanobis + log_det + static_cast<double>(dim) * std::log(2.0 * std::numbers::pi));
  g.density = std::exp(g.log_density);
  g.score_mean_params = policy.mean_net.backward(c, dmean).params;
  g.score_logvar_params = policy.logvar_net.backward(c, dlogvar).params;
  g.grad_mean_params = g.density * g.score_mean_params;
  g.grad_logvar_params = g.density * g.score_logvar_params;
  return g;
}

// ---------------------------------------------------------------------------
// Standardizer

Standardizer Standardizer::identity(int size) {
  return {Eigen::VectorXd::Zero(size), Eigen::VectorXd::Ones(size)};
}

Standardizer Standardizer::fit(std::span<const Eigen::VectorXd> samples) {
  if (samples.empty()) throw std::invalid_argument("cannot fit a standardizer on no samples");
  const auto dim = samples.front().size();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
  for (const auto& s : samples) mean += s;
  mean /= static_cast<double>(samples.size());
  Eigen::VectorXd var = Eigen::VectorXd::Zero(dim);
  for (const auto& s : samples) var += (s - mean).cwiseAbs2();
  var /= static_cast<double>(samples.size());
  Eigen::VectorXd scale = var.cwiseSqrt();
  for (Eigen::Index i = 0; i < dim; ++i)
    if (!(scale[i] > 1e-12)) scale[i] = 1.0;
  return {mean, scale};
}

Eigen::VectorXd Standardizer::apply(const Eigen::VectorXd& raw) const {
  require_size(raw.size(), static_cast<int>(mean.size()), "standardizer input");
  return (raw - mean).cwiseQuotient(scale);
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(std::size_t size, double learning_rate)
    : lr_(learning_rate),
      m_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(size))),
      v_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(size))) {}

void Adam::step(std::span<double> params, const Eigen::VectorXd& grad) {
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    params[i] -= lr_ * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + eps_);
  }
}

// ---------------------------------------------------------------------------
// Serialization

void write_mlp(std::ostream& out, const Mlp& net) {
  out << "mlp " << net.layer_sizes().size();
  for (int s : net.layer_sizes()) out << ' ' << s;
  out << '\n';
  int col = 0;
  for (double p : net.parameters()) {
    fmt::print(out, "{}{:.17g}", col == 0 ? "" : " ", p);
    if (++col == 8) {
      out << '\n';
      col = 0;
    }
  }
  if (col != 0) out << '\n';
}

Mlp read_mlp(std::istream& in) {
  std::string tag;
  std::size_t count = 0;
  if (!(in >> tag >> count) || tag != "mlp" || count < 2 || count > 64)
    throw ParseError("expected 'mlp <layer count>'", 0);
  std::vector<int> sizes(count);
  for (auto& s : sizes)
    if (!(in >> s) || s <= 0) throw ParseError("bad layer size", 0);
  Mlp net(std::move(sizes));
  for (double& p : net.parameters()) {
    std::string token;
    if (!(in >> token)) throw ParseError("truncated parameter list", 0);
    try {
      std::size_t used = 0;
      p = std::stod(token, &used);
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      throw ParseError("bad parameter '" + token + "'", 0);
    }
  }
  return net;
}

}  // namespace hdsse
