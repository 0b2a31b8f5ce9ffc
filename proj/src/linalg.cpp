#include "conformal_kit/linalg.hpp"

#include <cmath>
#include <string>

#include "conformal_kit/errors.hpp"

namespace ckit {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("dimension mismatch: " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double t = a[k] - b[k];
    s += t * t;
  }
  return s;
}

void Dataset::validate() const {
  if (static_cast<std::size_t>(x.rows()) != y.size()) {
    throw DimensionError("dataset has " + std::to_string(x.rows()) + " covariate rows but " +
                         std::to_string(y.size()) + " responses");
  }
}

Dataset Dataset::subset(std::size_t begin, std::size_t end) const {
  Dataset out;
  const auto b = static_cast<Eigen::Index>(begin);
  const auto len = static_cast<Eigen::Index>(end - begin);
  out.x = x.middleRows(b, len);
  out.y.assign(y.begin() + static_cast<std::ptrdiff_t>(begin),
               y.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

}  // namespace ckit
