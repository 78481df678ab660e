#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "hdsse/errors.hpp"
#include "hdsse/grid_model.hpp"

namespace hdsse {

/// Branch currents of one network layer, laid out [Re I_b0, Im I_b0, Re I_b1, ...] (p.u.).
struct StateVector {
  Eigen::VectorXd values;

  StateVector() = default;
  explicit StateVector(Eigen::VectorXd v) : values(std::move(v)) {}

  static StateVector zeros(int branch_count) {
    return StateVector(Eigen::VectorXd::Zero(2 * branch_count));
  }
  static StateVector from_currents(std::span<const Complex> currents) {
    StateVector s = zeros(static_cast<int>(currents.size()));
    for (std::size_t b = 0; b < currents.size(); ++b) s.set_current(BranchId{static_cast<int>(b)}, currents[b]);
    return s;
  }

  int branch_count() const { return static_cast<int>(values.size() / 2); }
  Complex current(BranchId b) const { return {values[2 * b.value], values[2 * b.value + 1]}; }
  void set_current(BranchId b, Complex i) {
    values[2 * b.value] = i.real();
    values[2 * b.value + 1] = i.imag();
  }
};

inline void require_state_dim(const StateVector& x, const RadialNetwork& net) {
  if (x.values.size() != 2 * net.branch_count())
    throw DimensionError("state length " + std::to_string(x.values.size()) + " != 2 x " +
                         std::to_string(net.branch_count()) + " branches");
}

}  // namespace hdsse
