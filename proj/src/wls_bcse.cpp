#include "hdsse/wls_bcse.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <fmt/format.h>

#include "hdsse/powerflow.hpp"

namespace hdsse {

namespace {

bool is_injection(MeasurementKind k) {
  return k == MeasurementKind::PInjection || k == MeasurementKind::TransformerP ||
         k == MeasurementKind::QInjection || k == MeasurementKind::TransformerQ;
}

bool is_active(MeasurementKind k) {
  return k == MeasurementKind::PInjection || k == MeasurementKind::TransformerP;
}

bool uses_voltage_sweep(std::span<const Measurement> z) {
  return std::any_of(z.begin(), z.end(),
                     [](const Measurement& m) { return m.kind == MeasurementKind::VoltageMagnitude; });
}

void check_locations(const RadialNetwork& net, std::span<const Measurement> z) {
  for (std::size_t i = 0; i < z.size(); ++i) {
    const int limit = z[i].kind == MeasurementKind::CurrentMagnitude ? net.branch_count()
                                                                      : net.node_count();
    if (z[i].location < 0 || z[i].location >= limit)
      throw std::out_of_range(
          fmt::format("measurement {} references unknown location {}", i, z[i].location));
  }
}

// NaN-safe floor.
double floored(double v, double floor) { return v > floor ? v : floor; }

Complex injection_current(const RadialNetwork& net, const StateVector& x, NodeId n) {
  Complex inj = 0.0;
  if (auto parent = net.parent_branch(n)) inj += x.current(*parent);
  for (BranchId b : net.child_branches(n)) inj -= x.current(b);
  return inj;
}

}  // namespace

Eigen::VectorXd measurement_function(const RadialNetwork& net,
                                     std::span<const Measurement> measurements,
                                     const StateVector& state,
                                     std::span<const Complex> aux_voltages) {
  require_state_dim(state, net);
  check_locations(net, measurements);
  std::vector<Complex> swept;
  if (uses_voltage_sweep(measurements))
    swept = forward_sweep(net, aux_voltages[net.root().index()], state);

  Eigen::VectorXd h(static_cast<Eigen::Index>(measurements.size()));
  for (std::size_t i = 0; i < measurements.size(); ++i) {
    const Measurement& m = measurements[i];
    double value = 0.0;
    if (is_injection(m.kind)) {
      const NodeId n{m.location};
      const Complex s = aux_voltages[n.index()] * std::conj(injection_current(net, state, n));
      value = is_active(m.kind) ? s.real() : s.imag();
    } else if (m.kind == MeasurementKind::VoltageMagnitude) {
      value = std::abs(swept[static_cast<std::size_t>(m.location)]);
    } else {
      value = std::abs(state.current(BranchId{m.location}));
    }
    h[static_cast<Eigen::Index>(i)] = value;
  }
  return h;
}

JacobianResult jacobian(const RadialNetwork& net, std::span<const Measurement> measurements,
                        const StateVector& state, std::span<const Complex> aux_voltages) {
  require_state_dim(state, net);
  check_locations(net, measurements);
  std::vector<Complex> swept;
  if (uses_voltage_sweep(measurements))
    swept = forward_sweep(net, aux_voltages[net.root().index()], state);

  JacobianResult out;
  out.H = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(measurements.size()), state.values.size());
  auto& H = out.H;
  for (std::size_t i = 0; i < measurements.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const Measurement& m = measurements[i];
    if (is_injection(m.kind)) {
      const NodeId n{m.location};
      const Complex v = aux_voltages[n.index()];
      auto put = [&](BranchId b, double sign) {
        const auto col = 2 * static_cast<Eigen::Index>(b.value);
        if (is_active(m.kind)) {
          H(row, col) += sign * v.real();
          H(row, col + 1) += sign * v.imag();
        } else {
          H(row, col) += sign * v.imag();
          H(row, col + 1) -= sign * v.real();
        }
      };
      if (auto parent = net.parent_branch(n)) put(*parent, 1.0);
      for (BranchId b : net.child_branches(n)) put(b, -1.0);
    } else if (m.kind == MeasurementKind::VoltageMagnitude) {
      const Complex v = swept[static_cast<std::size_t>(m.location)];
      const double mag = std::abs(v);
      if (mag == 0.0) {
        out.singular_rows.push_back(static_cast<int>(i));
        continue;
      }
      for (BranchId b : net.path_to_root(NodeId{m.location})) {
        const Branch& br = net.branch(b);
        const auto col = 2 * static_cast<Eigen::Index>(b.value);
        H(row, col) = -(v.real() * br.r + v.imag() * br.x) / mag;
        H(row, col + 1) = (v.real() * br.x - v.imag() * br.r) / mag;
      }
    } else {
      const Complex c = state.current(BranchId{m.location});
      const double mag = std::abs(c);
      if (mag == 0.0) {
        out.singular_rows.push_back(static_cast<int>(i));
        continue;
      }
      const auto col = 2 * static_cast<Eigen::Index>(m.location);
      H(row, col) = c.real() / mag;
      H(row, col + 1) = c.imag() / mag;
    }
  }
  return out;
}

WlsSolution wls_solve(const RadialNetwork& net, std::span<const Measurement> measurements,
                      const WlsConfig& config, const StateVector& x0) {
  require_state_dim(x0, net);
  if (!(config.delta > 0) || !(config.variance_floor > 0) || config.max_iter < 1)
    throw std::invalid_argument("invalid WLS configuration");
  const auto m = static_cast<Eigen::Index>(measurements.size());
  const Eigen::Index n = x0.values.size();
  if (m < n)
    throw ObservabilityError(
        fmt::format("{} measurements cannot observe {} states", m, n), 0.0);

  Eigen::VectorXd z(m), sqrt_w(m);
  Complex root_voltage = config.default_root_voltage;
  for (Eigen::Index i = 0; i < m; ++i) {
    const Measurement& meas = measurements[static_cast<std::size_t>(i)];
    z[i] = meas.value;
    sqrt_w[i] = 1.0 / std::sqrt(floored(meas.variance, config.variance_floor));
    if (meas.kind == MeasurementKind::VoltageMagnitude && meas.location == net.root().value)
      root_voltage = meas.value;
  }

  WlsSolution sol;
  StateVector x = x0;
  for (int k = 1; k <= config.max_iter; ++k) {
    const auto v = forward_sweep(net, root_voltage, x);
    const Eigen::VectorXd r = z - measurement_function(net, measurements, x, v);
    sol.objective_history.push_back(r.cwiseProduct(sqrt_w).squaredNorm());

    JacobianResult jac = jacobian(net, measurements, x, v);
    const Eigen::MatrixXd Hw = sqrt_w.asDiagonal() * jac.H;
    const Eigen::MatrixXd G = Hw.transpose() * Hw;
    const double scale = std::max(1.0, G.cwiseAbs().maxCoeff());
    if ((G - G.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
      throw std::logic_error("gain matrix lost symmetry");

    const Eigen::LLT<Eigen::MatrixXd> llt(G);
    if (llt.info() != Eigen::Success)
      throw ObservabilityError(
          fmt::format("gain matrix is not positive definite at iteration {}", k), 0.0);
    sol.rcond = llt.rcond();
    if (!(sol.rcond > 1e3 * std::numeric_limits<double>::epsilon()))
      throw ObservabilityError(
          fmt::format("gain matrix ill-conditioned (rcond {:.3g}) at iteration {}", sol.rcond, k),
          sol.rcond);

    const Eigen::VectorXd dx = llt.solve(Hw.transpose() * r.cwiseProduct(sqrt_w));
    x.values += dx;
    if (!x.values.allFinite()) throw ConvergenceError("WLS state diverged", k);
    if (dx.lpNorm<Eigen::Infinity>() <= config.delta) {
      sol.iterations = k;
      break;
    }
    if (k == config.max_iter)
      throw ConvergenceError(
          fmt::format("WLS did not converge in {} iterations (last step {:.3g})", k,
                      dx.lpNorm<Eigen::Infinity>()),
          k);
  }

  sol.voltages = forward_sweep(net, root_voltage, x);
  const Eigen::VectorXd r = z - measurement_function(net, measurements, x, sol.voltages);
  sol.objective = r.cwiseProduct(sqrt_w).squaredNorm();
  for (const Measurement& meas : measurements)
    if (meas.kind == MeasurementKind::TransformerP)
      sol.transformer_voltages.emplace_back(NodeId{meas.location},
                                            sol.voltages[static_cast<std::size_t>(meas.location)]);
  sol.state = std::move(x);
  return sol;
}

std::vector<double> assemble_weights(std::span<const SensorSpec> sensors,
                                     std::span<const BoundaryVariance> boundary,
                                     double variance_floor) {
  std::vector<double> out;
  out.reserve(sensors.size() + 2 * boundary.size());
  for (const auto& s : sensors) out.push_back(floored(s.variance(), variance_floor));
  for (const auto& b : boundary) {
    out.push_back(floored(b.var_p, variance_floor));
    out.push_back(floored(b.var_q, variance_floor));
  }
  return out;
}

}  // namespace hdsse
