#include "conformal_kit/kernels.hpp"

#include <algorithm>
#include <cmath>

#include "conformal_kit/errors.hpp"

namespace ckit {

std::string to_string(KernelFamily f) { return f == KernelFamily::gaussian ? "gaussian" : "boxcar"; }

KernelFamily kernel_family_from_string(const std::string& name) {
  if (name == "gaussian") return KernelFamily::gaussian;
  if (name == "boxcar") return KernelFamily::boxcar;
  throw ConfigError("unknown kernel family '" + name + "'");
}

KernelSpec::KernelSpec(KernelFamily f, double h) : family(f), bandwidth(h) {
  if (!(h > 0.0)) throw ConfigError("kernel bandwidth must be positive");
}

double KernelSpec::from_squared_distance(double d2) const {
  const double u2 = d2 / (bandwidth * bandwidth);
  if (family == KernelFamily::gaussian) return std::exp(-0.5 * u2);
  return u2 <= 1.0 ? 1.0 : 0.0;
}

double kernel_eval(const KernelSpec& spec, std::span<const double> x1, std::span<const double> x2) {
  return spec.from_squared_distance(squared_distance(x1, x2));
}

std::vector<double> sample_auxiliary_covariate(const KernelSpec& spec,
                                               std::span<const double> x_test, Rng& rng) {
  const std::size_t d = x_test.size();
  std::vector<double> out(x_test.begin(), x_test.end());
  if (spec.family == KernelFamily::gaussian) {
    for (std::size_t k = 0; k < d; ++k) out[k] += spec.bandwidth * rng.normal();
    return out;
  }
  std::vector<double> z(d);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& v : z) {
      v = rng.normal();
      norm += v * v;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  const double r = spec.bandwidth * std::pow(rng.uniform(), 1.0 / static_cast<double>(d));
  for (std::size_t k = 0; k < d; ++k) out[k] += r * z[k] / norm;
  return out;
}

PairwiseDistances::PairwiseDistances(const Matrix& covariates)
    : n_(static_cast<std::size_t>(covariates.rows())) {
  if (n_ < 2) throw DomainError("need at least 2 covariate rows");
  d2_.reserve(n_ * (n_ - 1) / 2);
  for (std::size_t i = 0; i < n_; ++i) {
    const auto xi = row_span(covariates, static_cast<Eigen::Index>(i));
    for (std::size_t j = i + 1; j < n_; ++j) {
      d2_.push_back(squared_distance(xi, row_span(covariates, static_cast<Eigen::Index>(j))));
    }
  }
}

double PairwiseDistances::at(std::size_t i, std::size_t j) const {
  if (i == j) return 0.0;
  if (i > j) std::swap(i, j);
  return d2_[i * (2 * n_ - i - 1) / 2 + (j - i - 1)];
}

double PairwiseDistances::median_distance() const {
  std::vector<double> tmp = d2_;
  const auto mid = tmp.begin() + static_cast<std::ptrdiff_t>(tmp.size() / 2);
  std::nth_element(tmp.begin(), mid, tmp.end());
  return std::sqrt(*mid);
}

double estimate_effective_sample_size(const KernelSpec& spec, const PairwiseDistances& dist,
                                      std::optional<double> reference_n) {
  const std::size_t n = dist.rows();
  std::vector<double> row_sum(n, 0.0);
  double sq_sum = 0.0;
  // Gaussian weights relative to the closest pair.
  double shift = 0.0;
  if (spec.family == KernelFamily::gaussian && !dist.packed().empty()) {
    shift = *std::min_element(dist.packed().begin(), dist.packed().end());
  }
  std::size_t p = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j, ++p) {
      const double k = spec.from_squared_distance(dist.packed()[p] - shift);
      row_sum[i] += k;
      row_sum[j] += k;
      sq_sum += 2.0 * k * k;
    }
  }
  const double nm1 = static_cast<double>(n - 1);
  double outer = 0.0;
  for (double s : row_sum) {
    const double m = s / nm1;
    outer += m * m;
  }
  outer /= static_cast<double>(n);
  const double mean_sq = sq_sum / (static_cast<double>(n) * nm1);
  const double scale = reference_n.value_or(static_cast<double>(n));
  if (mean_sq == 0.0) return 0.0;
  return scale * outer / mean_sq;
}

double estimate_effective_sample_size(const KernelSpec& spec, const Matrix& covariates,
                                      std::optional<double> reference_n) {
  return estimate_effective_sample_size(spec, PairwiseDistances(covariates), reference_n);
}

double bandwidth_for_target_neff(double target, const PairwiseDistances& dist,
                                 KernelFamily family, std::optional<double> reference_n,
                                 const BandwidthSearch& search) {
  const double n = reference_n.value_or(static_cast<double>(dist.rows()));
  if (!(target > 1.0 && target <= n)) {
    throw ConfigError("target effective sample size must lie in (1, n]");
  }
  const double med = dist.median_distance();
  if (!(med > 0.0)) throw NumericalError("covariates have zero median pairwise distance");
  // Bisect on log(h / median) so the iterates are exactly scale equivariant.
  double lo = std::log(search.lower_factor);
  double hi = std::log(search.upper_factor);
  auto to_h = [&](double t) { return med * std::exp(t); };
  auto eval = [&](double t) {
    return estimate_effective_sample_size(KernelSpec(family, to_h(t)), dist, reference_n);
  };
  const double f_lo = eval(lo);
  const double f_hi = eval(hi);
  if (std::abs(f_hi - target) <= search.tolerance) return to_h(hi);
  if (std::abs(f_lo - target) <= search.tolerance) return to_h(lo);
  if (!(f_lo < target && target < f_hi)) {
    throw NumericalError("bandwidth bracket does not contain the target effective sample size",
                         {to_h(lo), to_h(hi)});
  }
  double mid = 0.5 * (lo + hi);
  for (int it = 0; it < search.max_iterations; ++it) {
    mid = 0.5 * (lo + hi);
    const double f = eval(mid);
    if (std::abs(f - target) <= search.tolerance) return to_h(mid);
    if (f < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  throw NumericalError("bandwidth search did not reach tolerance", {to_h(mid)});
}

double bandwidth_for_target_neff(double target, const Matrix& covariates, KernelFamily family,
                                 std::optional<double> reference_n, const BandwidthSearch& search) {
  return bandwidth_for_target_neff(target, PairwiseDistances(covariates), family, reference_n,
                                   search);
}

}  // namespace ckit
