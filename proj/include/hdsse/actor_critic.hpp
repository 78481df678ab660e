#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include <Eigen/Core>

#include "hdsse/grid_model.hpp"
#include "hdsse/neural.hpp"
#include "hdsse/state.hpp"

namespace hdsse {

struct AcConfig {
  std::vector<int> hidden = {10, 10, 10};
  double actor_lr = 0.01;
  double critic_lr = 0.01;
  double u_max = 0.05;        // exploratory perturbation half-width, p.u.
  double u_decay = 0.999;     // per training step
  double u_floor = 0.005;
  double initial_logvar = -9.0;
  double meter_interval_h = 0.25;  // energy -> average power
  double max_step_norm = 1.0;      // per-update parameter step clip, 0 disables
};

/// Layer-2 inputs for one circuit at one timestep. Meter vectors follow the
/// circuit's metered-customer order.
struct AcInput {
  std::vector<double> meter_voltage;  // |V|, p.u.
  std::vector<double> meter_energy;   // p.u. x hours over one meter interval
  Complex v_transformer{1.0, 0.0};    // from layer 1
};

struct BoundaryUp {
  double p = 0.0;
  double q = 0.0;
  double var_p = 1.0;
  double var_q = 1.0;
};

enum class InferMode { Mean, Sample };

struct TrainReport {
  double tde = 0.0;        // critic prediction minus realized residual
  double residual = 0.0;
  double predicted = 0.0;
  bool skipped = false;    // non-finite residual
};

struct AcSample {
  AcInput input;
  StateVector truth;
};

struct PretrainOptions {
  int epochs = 60;
  int batch = 32;
  double learning_rate = 3e-3;
  double validation_fraction = 0.1;
  int logvar_epochs = 20;
  int critic_epochs = 40;
};

struct PretrainReport {
  std::vector<double> epoch_loss;  // mean-network training loss per epoch
  double validation_current_mape = 0.0;
  double validation_voltage_mape = 0.0;
  std::size_t train_samples = 0;
  std::size_t validation_samples = 0;
};

/// Actor-critic estimator for one secondary circuit.
class AcModule {
 public:
  AcModule() = default;
  AcModule(SecondaryCircuit circuit, AcConfig config, std::uint64_t seed);

  const SecondaryCircuit& circuit() const { return circuit_; }
  const AcConfig& config() const { return config_; }
  GaussianPolicy& policy() { return policy_; }
  const GaussianPolicy& policy() const { return policy_; }
  Mlp& critic() { return critic_; }
  const Mlp& critic() const { return critic_; }
  Standardizer& input_scaler() { return scaler_; }
  const Standardizer& input_scaler() const { return scaler_; }
  Rng& rng() { return rng_; }

  int meter_count() const { return static_cast<int>(metered_.size()); }
  int input_size() const { return 2 * meter_count() + 2; }
  int state_dim() const { return circuit_.state_dim(); }
  std::span<const std::size_t> metered() const { return metered_; }

  double perturbation() const { return u_current_; }
  void set_perturbation(double u) { u_current_ = u; }
  long steps() const { return steps_; }

  /// Confidence statistics: exponential moving averages of |TDE| and residual.
  double tde_ema() const { return tde_ema_; }
  double residual_ema() const { return residual_ema_; }
  void observe(const TrainReport& report, double half_life);

  /// Raw c_n: meter voltages, meter average powers, |V_n|, angle V_n.
  Eigen::VectorXd features(const AcInput& input) const;
  Eigen::VectorXd standardized(const AcInput& input) const { return scaler_.apply(features(input)); }

  void save(std::ostream& out) const;
  static AcModule load(std::istream& in, const SecondaryCircuit& circuit);

  friend TrainReport train_step(AcModule& module, const AcInput& input);

 private:
  SecondaryCircuit circuit_;
  std::vector<std::size_t> metered_;
  AcConfig config_;
  GaussianPolicy policy_;
  Mlp critic_;
  Standardizer scaler_;
  Rng rng_;
  double u_current_ = 0.0;
  long steps_ = 0;
  double tde_ema_ = 0.0;
  double residual_ema_ = 0.0;
  bool ema_started_ = false;
};

/// Mean mode is deterministic; sample mode draws from the policy with the module's rng.
StateVector infer_states(AcModule& module, const AcInput& input, InferMode mode);
StateVector infer_mean(const AcModule& module, const AcInput& input);

/// Head-branch complex power and its variance, from states and their per-state variances.
BoundaryUp boundary_up(const AcModule& module, Complex v_transformer, const StateVector& states,
                       const Eigen::VectorXd& state_variance);
/// boundary_up with the policy's own variance at this input.
BoundaryUp boundary_up(const AcModule& module, const AcInput& input, const StateVector& states);

/// Voltages of the circuit's local nodes from the transformer voltage and states.
std::vector<Complex> circuit_voltages(const SecondaryCircuit& circuit, Complex v_transformer,
                                      const StateVector& states);

/// Sum of squared differences between swept and measured meter voltage magnitudes.
/// Throws std::domain_error for a circuit without meters.
double realized_residual(const AcModule& module, const AcInput& input, const StateVector& states);

/// One Stage-B update: perturbed sample, residual, critic and actor steps.
TrainReport train_step(AcModule& module, const AcInput& input);

/// Supervised warm start from oracle-labelled samples.
PretrainReport pretrain(AcModule& module, std::span<const AcSample> dataset,
                        const PretrainOptions& options = {});

void save_module(const AcModule& module, const std::filesystem::path& path);
AcModule load_module(const std::filesystem::path& path, const SecondaryCircuit& circuit);

}  // namespace hdsse
