#pragma once

#include <Eigen/Dense>
#include <span>

namespace ckit {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline std::span<const double> row_span(const Matrix& m, Eigen::Index i) {
  return {m.data() + i * m.cols(), static_cast<std::size_t>(m.cols())};
}

double squared_distance(std::span<const double> a, std::span<const double> b);

struct Dataset {
  Matrix x;
  std::vector<double> y;

  std::size_t size() const { return y.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(x.cols()); }
  std::span<const double> row(std::size_t i) const {
    return row_span(x, static_cast<Eigen::Index>(i));
  }
  void validate() const;
  Dataset subset(std::size_t begin, std::size_t end) const;
};

}  // namespace ckit
