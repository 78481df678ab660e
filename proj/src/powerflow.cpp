#include "hdsse/powerflow.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace hdsse {

std::vector<Complex> forward_sweep(const RadialNetwork& net, Complex root_voltage,
                                   const StateVector& branch_currents) {
  require_state_dim(branch_currents, net);
  std::vector<Complex> v(static_cast<std::size_t>(net.node_count()));
  const auto order = net.topological_order();
  v[order.front().index()] = root_voltage;
  for (std::size_t k = 1; k < order.size(); ++k) {
    const NodeId n = order[k];
    const BranchId b = *net.parent_branch(n);
    const Branch& br = net.branch(b);
    v[n.index()] = v[br.from.index()] - br.impedance() * branch_currents.current(b);
  }
  return v;
}

std::vector<Complex> node_injection_currents(const RadialNetwork& net, const StateVector& currents) {
  require_state_dim(currents, net);
  std::vector<Complex> inj(static_cast<std::size_t>(net.node_count()));
  for (int b = 0; b < net.branch_count(); ++b) {
    const Branch& br = net.branch(BranchId{b});
    const Complex i = currents.current(BranchId{b});
    inj[br.to.index()] += i;
    inj[br.from.index()] -= i;
  }
  return inj;
}

PowerFlowResult solve_powerflow(const RadialNetwork& net, std::span<const PowerInjection> injections,
                                Complex root_voltage, const PowerFlowOptions& options) {
  if (!(options.tol > 0)) throw std::invalid_argument("power-flow tolerance must be positive");
  if (static_cast<int>(injections.size()) != net.node_count())
    throw DimensionError("one injection per node required");

  const auto order = net.topological_order();
  const std::size_t n_nodes = order.size();
  PowerFlowResult result;
  result.voltages.assign(n_nodes, root_voltage);
  result.currents = StateVector::zeros(net.branch_count());
  std::vector<Complex> through(n_nodes);

  for (int it = 1; it <= options.max_iter; ++it) {
    // Backward: each node's parent branch carries its own load plus everything below.
    for (std::size_t k = n_nodes; k-- > 1;) {
      const NodeId n = order[k];
      const Complex vn = result.voltages[n.index()];
      if (std::abs(vn) == 0.0)
        throw std::domain_error(fmt::format("zero voltage at node {}", n.value));
      through[n.index()] += std::conj(injections[n.index()].s() / vn);
      const BranchId b = *net.parent_branch(n);
      result.currents.set_current(b, through[n.index()]);
      through[net.branch(b).from.index()] += through[n.index()];
      through[n.index()] = 0.0;
    }
    through[order.front().index()] = 0.0;

    // Forward.
    double max_change = 0.0;
    for (std::size_t k = 1; k < n_nodes; ++k) {
      const NodeId n = order[k];
      const BranchId b = *net.parent_branch(n);
      const Branch& br = net.branch(b);
      const Complex v = result.voltages[br.from.index()] - br.impedance() * result.currents.current(b);
      max_change = std::max(max_change, std::abs(v - result.voltages[n.index()]));
      result.voltages[n.index()] = v;
    }
    if (!std::isfinite(max_change))
      throw ConvergenceError("power flow diverged", it);
    if (max_change < options.tol) {
      result.iterations = it;
      return result;
    }
  }
  throw ConvergenceError(
      fmt::format("power flow did not converge in {} iterations", options.max_iter), options.max_iter);
}

double max_kcl_residual(const RadialNetwork& net, std::span<const Complex> voltages,
                        const StateVector& currents, std::span<const PowerInjection> injections) {
  const auto inj = node_injection_currents(net, currents);
  double worst = 0.0;
  for (int n = 0; n < net.node_count(); ++n) {
    if (NodeId{n} == net.root()) continue;
    const auto i = static_cast<std::size_t>(n);
    worst = std::max(worst, std::abs(inj[i] - std::conj(injections[i].s() / voltages[i])));
  }
  return worst;
}

double energy_balance_residual(const RadialNetwork& net, std::span<const Complex> voltages,
                               const StateVector& currents,
                               std::span<const PowerInjection> injections) {
  const NodeId root = net.root();
  Complex out_of_root = 0.0;
  for (BranchId b : net.child_branches(root)) out_of_root += currents.current(b);
  const Complex supplied = voltages[root.index()] * std::conj(out_of_root);
  Complex consumed = 0.0;
  for (int n = 0; n < net.node_count(); ++n)
    if (NodeId{n} != root) consumed += injections[static_cast<std::size_t>(n)].s();
  for (int b = 0; b < net.branch_count(); ++b) {
    const Branch& br = net.branch(BranchId{b});
    consumed += br.impedance() * std::norm(currents.current(BranchId{b}));
  }
  return std::abs(supplied - consumed);
}

}  // namespace hdsse
