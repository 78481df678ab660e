#pragma once

#include <iosfwd>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace hdsse {

using Rng = std::mt19937_64;

/// Dense feed-forward network: tanh hidden layers, linear output.
///
/// Parameters live in one flat buffer, layer by layer: the weight matrix
/// (n_out x n_in, column-major) followed by the bias vector.
class Mlp {
 public:
  Mlp() = default;
  /// All-zero parameters.
  explicit Mlp(std::vector<int> layer_sizes);
  /// Xavier-uniform weights, zero biases.
  static Mlp xavier(std::vector<int> layer_sizes, Rng& rng);

  std::span<const int> layer_sizes() const { return sizes_; }
  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  std::size_t parameter_count() const { return params_.size(); }
  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  Eigen::VectorXd forward(const Eigen::VectorXd& input) const;

  struct Gradients {
    Eigen::VectorXd params;
    Eigen::VectorXd input;
  };
  /// Gradients of output' * output_grad with respect to parameters and input.
  Gradients backward(const Eigen::VectorXd& input, const Eigen::VectorXd& output_grad) const;

  /// Scale the last layer's weights and biases (used to shrink initial outputs).
  void scale_output_layer(double factor);
  void set_output_bias(double value);
  void set_output_bias(const Eigen::VectorXd& values);
  /// Compose an affine map onto the output: y -> shift + scale .* y.
  void fold_output_affine(const Eigen::VectorXd& scale, const Eigen::VectorXd& shift);

  friend bool operator==(const Mlp&, const Mlp&) = default;

 private:
  std::size_t layer_offset(std::size_t layer) const { return offsets_[layer]; }

  std::vector<int> sizes_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
};

Eigen::VectorXd mlp_forward(const Mlp& net, const Eigen::VectorXd& input);
Mlp::Gradients mlp_backward(const Mlp& net, const Eigen::VectorXd& input,
                            const Eigen::VectorXd& output_grad);

/// Diagonal Gaussian policy: mean and log-variance each produced by an Mlp.
struct GaussianPolicy {
  Mlp mean_net;
  Mlp logvar_net;
  double logvar_min = -10.0;
  double logvar_max = 2.0;

  int input_size() const { return mean_net.input_size(); }
  int state_size() const { return mean_net.output_size(); }
};

struct PolicyOutput {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
};

PolicyOutput policy_eval(const GaussianPolicy& policy, const Eigen::VectorXd& c);
/// mean + sqrt(variance) * eps, eps ~ N(0, I).
Eigen::VectorXd policy_sample(const GaussianPolicy& policy, const Eigen::VectorXd& c, Rng& rng);

struct PolicyGradients {
  double density = 0.0;
  double log_density = 0.0;
  double mahalanobis = 0.0;         // (x - mu)' Sigma^-1 (x - mu)
  Eigen::VectorXd grad_mean_params;    // d density / d theta
  Eigen::VectorXd grad_logvar_params;  // d density / d gamma
  Eigen::VectorXd score_mean_params;   // d log density / d theta
  Eigen::VectorXd score_logvar_params; // d log density / d gamma
};

/// Density of x under the policy at input c and its gradients with respect to
/// both networks' parameters. The clamp on log-variance has zero derivative
/// outside [logvar_min, logvar_max].
PolicyGradients policy_logdensity_and_grads(const GaussianPolicy& policy,
                                            const Eigen::VectorXd& c, const Eigen::VectorXd& x);

/// Per-feature affine normalization fitted on training inputs.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  static Standardizer identity(int size);
  static Standardizer fit(std::span<const Eigen::VectorXd> samples);
  Eigen::VectorXd apply(const Eigen::VectorXd& raw) const;
};

/// Adam optimizer state for one parameter buffer.
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t size, double learning_rate);
  /// Descends along `grad` (gradient of a loss to minimize).
  void step(std::span<double> params, const Eigen::VectorXd& grad);
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  double lr_ = 1e-3;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  long t_ = 0;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
};

void write_mlp(std::ostream& out, const Mlp& net);
/// Throws ParseError on malformed input.
Mlp read_mlp(std::istream& in);

}  // namespace hdsse
