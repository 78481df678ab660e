#include "hdsse/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace hdsse {

MapeResult mape_detail(std::span<const double> estimates, std::span<const double> actuals, double guard) {
  if (estimates.size() != actuals.size()) throw std::invalid_argument("mape: series lengths differ");
  if (actuals.empty()) throw std::invalid_argument("mape: empty series");
  MapeResult out;
  double sum = 0.0;
  for (std::size_t i = 0; i < actuals.size(); ++i) {
    if (!(std::abs(actuals[i]) >= guard)) {
      ++out.excluded;
      continue;
    }
    sum += std::abs((actuals[i] - estimates[i]) / actuals[i]);
    ++out.included;
  }
  if (out.included == 0) throw std::invalid_argument("mape: every actual value is below the guard");
  out.percent = 100.0 * sum / static_cast<double>(out.included);
  return out;
}

double mape(std::span<const double> estimates, std::span<const double> actuals) {
  return mape_detail(estimates, actuals).percent;
}

}  // namespace hdsse
