#pragma once

#include <span>
#include <vector>

#include "hdsse/grid_model.hpp"
#include "hdsse/state.hpp"

namespace hdsse {

/// Complex power at a node, load convention: positive = consumption, negative = generation.
struct PowerInjection {
  double p = 0.0;
  double q = 0.0;
  Complex s() const { return {p, q}; }
};

/// Node voltages from the root voltage and branch currents:
/// V_n = V_root - sum over path_to_root(n) of z_b * I_b. Exact, non-iterative.
std::vector<Complex> forward_sweep(const RadialNetwork& net, Complex root_voltage,
                                   const StateVector& branch_currents);

struct PowerFlowOptions {
  double tol = 1e-8;
  int max_iter = 100;
};

struct PowerFlowResult {
  std::vector<Complex> voltages;
  StateVector currents;
  int iterations = 0;
};

/// Ladder (backward/forward sweep) power flow with constant-power loads.
///
/// `injections` is indexed by node; the root entry is ignored (slack). Stops
/// when the largest node-voltage change is below `tol`. Throws ConvergenceError
/// after `max_iter` sweeps and std::domain_error on a zero node voltage.
PowerFlowResult solve_powerflow(const RadialNetwork& net, std::span<const PowerInjection> injections,
                                Complex root_voltage, const PowerFlowOptions& options = {});

/// Net current drawn by each node from the branches: sum(in) - sum(out).
std::vector<Complex> node_injection_currents(const RadialNetwork& net, const StateVector& currents);

/// Largest |I_inj,n - conj(S_n / V_n)| over non-root nodes.
double max_kcl_residual(const RadialNetwork& net, std::span<const Complex> voltages,
                        const StateVector& currents, std::span<const PowerInjection> injections);

/// |S_root - sum(S_loads) - sum(z_b |I_b|^2)|.
double energy_balance_residual(const RadialNetwork& net, std::span<const Complex> voltages,
                               const StateVector& currents,
                               std::span<const PowerInjection> injections);

}  // namespace hdsse
