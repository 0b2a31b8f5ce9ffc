#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "conformal_kit/linalg.hpp"
#include "conformal_kit/rng.hpp"

namespace ckit {

enum class KernelFamily { gaussian, boxcar };

std::string to_string(KernelFamily f);
KernelFamily kernel_family_from_string(const std::string& name);

struct KernelSpec {
  KernelFamily family = KernelFamily::gaussian;
  double bandwidth = 1.0;

  KernelSpec() = default;
  KernelSpec(KernelFamily f, double h);

  // K0(sqrt(d2)/h) from a squared distance.
  double from_squared_distance(double d2) const;
};

double kernel_eval(const KernelSpec& spec, std::span<const double> x1, std::span<const double> x2);

std::vector<double> sample_auxiliary_covariate(const KernelSpec& spec,
                                               std::span<const double> x_test, Rng& rng);

// Pairwise squared distances of the rows, packed upper triangle (i < j).
class PairwiseDistances {
 public:
  explicit PairwiseDistances(const Matrix& covariates);

  std::size_t rows() const { return n_; }
  double at(std::size_t i, std::size_t j) const;
  const std::vector<double>& packed() const { return d2_; }
  double median_distance() const;

 private:
  std::size_t n_;
  std::vector<double> d2_;
};

// n * mean_i[(mean_{j!=i} K_ij)^2] / mean_{i!=j} K_ij^2, with n = reference_n when given.
double estimate_effective_sample_size(const KernelSpec& spec, const Matrix& covariates,
                                      std::optional<double> reference_n = std::nullopt);
double estimate_effective_sample_size(const KernelSpec& spec, const PairwiseDistances& dist,
                                      std::optional<double> reference_n = std::nullopt);

struct BandwidthSearch {
  double lower_factor = 1e-3;
  double upper_factor = 1e3;
  int max_iterations = 200;
  double tolerance = 0.5;
};

double bandwidth_for_target_neff(double target, const Matrix& covariates,
                                 KernelFamily family = KernelFamily::gaussian,
                                 std::optional<double> reference_n = std::nullopt,
                                 const BandwidthSearch& search = {});
double bandwidth_for_target_neff(double target, const PairwiseDistances& dist,
                                 KernelFamily family = KernelFamily::gaussian,
                                 std::optional<double> reference_n = std::nullopt,
                                 const BandwidthSearch& search = {});

}  // namespace ckit
