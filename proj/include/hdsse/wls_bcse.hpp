#pragma once

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "hdsse/grid_model.hpp"
#include "hdsse/state.hpp"

namespace hdsse {

enum class MeasurementKind {
  PInjection,        // Re(V_n conj(I_inj,n)), load convention
  QInjection,        // Im(V_n conj(I_inj,n))
  VoltageMagnitude,  // |V_n|
  CurrentMagnitude,  // |I_b|
  TransformerP,      // boundary pseudo-measurement, same function as PInjection
  TransformerQ,
};

/// One entry of z. `location` is a node index for injection/voltage kinds and a
/// branch index for CurrentMagnitude, both local to the network being estimated.
struct Measurement {
  MeasurementKind kind = MeasurementKind::PInjection;
  int location = 0;
  double value = 0.0;
  double variance = 1.0;  // p.u.^2
};

struct WlsConfig {
  double delta = 1e-6;           // stop when ||dx||_inf <= delta
  int max_iter = 50;
  double variance_floor = 1e-10;
  double default_root_voltage = 1.0;  // used when z has no |V| at the root
};

struct WlsSolution {
  StateVector state;
  int iterations = 0;
  double objective = 0.0;  // J = r' W r at the returned state
  std::vector<Complex> voltages;
  std::vector<std::pair<NodeId, Complex>> transformer_voltages;
  std::vector<double> objective_history;  // J at the start of each iteration
  double rcond = 0.0;                     // of the last gain matrix
};

/// h(x). P/Q rows use `aux_voltages` (held fixed within an iteration); |V| rows
/// use a fresh forward sweep of `state` from aux_voltages[root].
Eigen::VectorXd measurement_function(const RadialNetwork& net,
                                     std::span<const Measurement> measurements,
                                     const StateVector& state,
                                     std::span<const Complex> aux_voltages);

struct JacobianResult {
  Eigen::MatrixXd H;
  /// Rows whose derivative is singular (|I_b| = 0 or |V_n| = 0); left zero.
  std::vector<int> singular_rows;
};

JacobianResult jacobian(const RadialNetwork& net, std::span<const Measurement> measurements,
                        const StateVector& state, std::span<const Complex> aux_voltages);

/// Gauss-Newton WLS over branch currents. Throws ObservabilityError for a
/// singular or ill-conditioned gain matrix and ConvergenceError after max_iter.
WlsSolution wls_solve(const RadialNetwork& net, std::span<const Measurement> measurements,
                      const WlsConfig& config, const StateVector& x0);

/// Accuracy class of a conventional sensor: the stated maximum error is taken as 3 sigma.
struct SensorSpec {
  double max_error_fraction = 0.03;
  double full_scale = 1.0;  // p.u.
  double variance() const {
    const double sigma = max_error_fraction * full_scale / 3.0;
    return sigma * sigma;
  }
};

struct BoundaryVariance {
  double var_p = 1.0;
  double var_q = 1.0;
};

/// Variances for [sensors..., p_1, q_1, p_2, q_2, ...], each floored at `variance_floor`.
/// WLS weights are their reciprocals.
std::vector<double> assemble_weights(std::span<const SensorSpec> sensors,
                                     std::span<const BoundaryVariance> boundary,
                                     double variance_floor);

}  // namespace hdsse
