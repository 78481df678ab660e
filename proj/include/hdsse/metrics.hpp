#pragma once

#include <cstddef>
#include <span>

namespace hdsse {

struct MapeResult {
  double percent = 0.0;
  std::size_t included = 0;
  std::size_t excluded = 0;  // |actual| below the guard
};

/// Mean of |actual - estimate| / |actual| x 100 over entries with |actual| >= guard.
/// Throws std::invalid_argument on unequal or empty input, or when every entry is guarded out.
MapeResult mape_detail(std::span<const double> estimates, std::span<const double> actuals,
                       double guard = 1e-9);
double mape(std::span<const double> estimates, std::span<const double> actuals);

}  // namespace hdsse
