#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "conformal_kit/core.hpp"
#include "conformal_kit/linalg.hpp"
#include "conformal_kit/rng.hpp"

namespace ckit {

double normal_cdf(double z);
double normal_quantile(double p);

// DGP1 noise sd: sum_abs = sum_i ||x_i| - c| / sqrt(d); abs_sum = |sum_i (|x_i| - c)| / sqrt(d).
enum class Dgp1Noise { sum_abs, abs_sum };

std::string to_string(Dgp1Noise f);
Dgp1Noise dgp1_noise_from_string(const std::string& name);

struct DgpSpec {
  int dgp = 1;
  std::size_t d = 10;
  double sigma_x = 1.0;
  std::size_t n = 500;
  std::size_t n_tr = 1000;
  std::size_t n_te = 500;
  std::uint64_t seed = 0;
  Dgp1Noise dgp1_noise = Dgp1Noise::sum_abs;

  void validate() const;
};

using CovariateFn = std::function<double(std::span<const double>)>;

double dgp_mean(const DgpSpec& spec, std::span<const double> x);
double dgp_noise_sd(const DgpSpec& spec, std::span<const double> x);

CovariateFn density_ratio(const DgpSpec& spec);

Matrix sample_covariates(std::size_t n, std::size_t d, double scale, Rng& rng);
Dataset sample_responses(const DgpSpec& spec, Matrix x, Rng& rng);

struct DgpDraw {
  Dataset train;
  Dataset calib;
  Matrix test_x;
};

// Train/calibration from N(0, I); test covariates from N(0, sigma_x^2 I).
DgpDraw generate_dgp(const DgpSpec& spec, Rng& rng);

double analytic_conditional_coverage(const PredictionRegion& region, std::span<const double> x,
                                     const DgpSpec& spec);

// Normal-law mass of the region for N(mu, sd^2); sd == 0 gives the indicator of mu.
double normal_region_mass(const PredictionRegion& region, double mu, double sd);

}  // namespace ckit
