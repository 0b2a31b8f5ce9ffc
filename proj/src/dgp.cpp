#include "conformal_kit/dgp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "conformal_kit/errors.hpp"

namespace ckit {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -kInf;
    if (p == 1.0) return kInf;
    throw DomainError("normal quantile needs p in [0,1]");
  }
  // Acklam's rational approximation, then Newton steps on the erfc-based CDF.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                             1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                             6.680131188771972e+01, -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                             -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                             3.754408661907416e+00};
  const double plow = 0.02425;
  double x = 0.0;
  if (p < plow) {
    const double q = std::sqrt(-2 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (p <= 1 - plow) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    const double q = std::sqrt(-2 * std::log(1 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  for (int it = 0; it < 3; ++it) {
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    if (pdf <= 0.0) break;
    x -= (normal_cdf(x) - p) / pdf;
  }
  return x;
}

std::string to_string(Dgp1Noise f) { return f == Dgp1Noise::sum_abs ? "sum_abs" : "abs_sum"; }

Dgp1Noise dgp1_noise_from_string(const std::string& name) {
  if (name == "sum_abs") return Dgp1Noise::sum_abs;
  if (name == "abs_sum") return Dgp1Noise::abs_sum;
  throw ConfigError("unknown dgp1 noise form '" + name + "' (expected sum_abs or abs_sum)");
}

void DgpSpec::validate() const {
  if (dgp < 1 || dgp > 3) throw ConfigError("dgp must be 1, 2 or 3");
  if (d < 1) throw ConfigError("dimension d must be at least 1");
  if (n < 1 || n_tr < 1 || n_te < 1) throw ConfigError("sizes must be at least 1");
  if (!(sigma_x > 0.0)) throw ConfigError("sigma_x must be positive");
}

double dgp_mean(const DgpSpec&, std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return 2.0 * s / static_cast<double>(x.size());
}

double dgp_noise_sd(const DgpSpec& spec, std::span<const double> x) {
  if (x.size() != spec.d) throw DimensionError("covariate dimension differs from the dgp");
  const double d = static_cast<double>(x.size());
  const double c = std::sqrt(2.0 / std::numbers::pi);
  double s = 0.0;
  switch (spec.dgp) {
    case 1:
      if (spec.dgp1_noise == Dgp1Noise::sum_abs) {
        for (double v : x) s += std::abs(std::abs(v) - c);
        return s / std::sqrt(d);
      }
      for (double v : x) s += std::abs(v) - c;
      return std::abs(s) / std::sqrt(d);
    case 2:
      for (double v : x) s += std::exp(std::abs(v));
      return s / std::sqrt(d);
    case 3:
      for (double v : x) s += std::abs(v);
      return std::sqrt(s / d);
    default:
      throw ConfigError("dgp must be 1, 2 or 3");
  }
}

CovariateFn density_ratio(const DgpSpec& spec) {
  if (!(spec.sigma_x > 0.0)) throw ConfigError("sigma_x must be positive");
  const double sigma = spec.sigma_x;
  const double log_norm = -static_cast<double>(spec.d) * std::log(sigma);
  const double coef = 0.5 * (1.0 - 1.0 / (sigma * sigma));
  return [log_norm, coef](std::span<const double> x) {
    double r2 = 0.0;
    for (double v : x) r2 += v * v;
    return std::exp(log_norm + coef * r2);
  };
}

Matrix sample_covariates(std::size_t n, std::size_t d, double scale, Rng& rng) {
  Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index k = 0; k < x.cols(); ++k) x(i, k) = scale * rng.normal();
  }
  return x;
}

Dataset sample_responses(const DgpSpec& spec, Matrix x, Rng& rng) {
  Dataset out;
  out.y.resize(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto xi = row_span(x, i);
    out.y[static_cast<std::size_t>(i)] = dgp_mean(spec, xi) + dgp_noise_sd(spec, xi) * rng.normal();
  }
  out.x = std::move(x);
  return out;
}

DgpDraw generate_dgp(const DgpSpec& spec, Rng& rng) {
  spec.validate();
  DgpDraw draw;
  Rng train_rng = rng.child(0);
  Rng calib_rng = rng.child(1);
  Rng test_rng = rng.child(2);
  draw.train = sample_responses(spec, sample_covariates(spec.n_tr, spec.d, 1.0, train_rng), train_rng);
  draw.calib = sample_responses(spec, sample_covariates(spec.n, spec.d, 1.0, calib_rng), calib_rng);
  draw.test_x = sample_covariates(spec.n_te, spec.d, spec.sigma_x, test_rng);
  return draw;
}

double normal_region_mass(const PredictionRegion& region, double mu, double sd) {
  if (sd == 0.0) return region.contains(mu) ? 1.0 : 0.0;
  double total = 0.0;
  for (const auto& iv : region.intervals()) {
    const double hi = iv.hi == kInf ? 1.0 : normal_cdf((iv.hi - mu) / sd);
    const double lo = iv.lo == -kInf ? 0.0 : normal_cdf((iv.lo - mu) / sd);
    total += hi - lo;
  }
  return std::clamp(total, 0.0, 1.0);
}

double analytic_conditional_coverage(const PredictionRegion& region, std::span<const double> x,
                                     const DgpSpec& spec) {
  return normal_region_mass(region, dgp_mean(spec, x), dgp_noise_sd(spec, x));
}

}  // namespace ckit
