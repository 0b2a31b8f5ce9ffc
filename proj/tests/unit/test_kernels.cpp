#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "conformal_kit/dgp.hpp"
#include "conformal_kit/errors.hpp"
#include "conformal_kit/kernels.hpp"
#include "support.hpp"

using namespace ckit;

namespace {

double direct_neff(const KernelSpec& k, const Matrix& x) {
  const auto n = static_cast<std::size_t>(x.rows());
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double v = kernel_eval(k, row_span(x, static_cast<Eigen::Index>(i)),
                                   row_span(x, static_cast<Eigen::Index>(j)));
      row += v;
      den += v * v;
    }
    row /= static_cast<double>(n - 1);
    num += row * row;
  }
  num /= static_cast<double>(n);
  den /= static_cast<double>(n * (n - 1));
  return static_cast<double>(n) * num / den;
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("kernel values") {
  const std::vector<double> a{0.0, 0.0};
  const std::vector<double> b{0.6, 0.8};
  const KernelSpec g(KernelFamily::gaussian, 1.0);
  CHECK(kernel_eval(g, a, a) == 1.0);
  CHECK(kernel_eval(g, a, b) == doctest::Approx(std::exp(-0.5)));
  const KernelSpec box(KernelFamily::boxcar, 1.0 / 1.5);
  CHECK(kernel_eval(box, a, b) == 0.0);
  CHECK(kernel_eval(KernelSpec(KernelFamily::boxcar, 2.0), a, b) == 1.0);
  CHECK_THROWS_AS(KernelSpec(KernelFamily::gaussian, 0.0), ConfigError);
  CHECK_THROWS_AS(kernel_family_from_string("epanechnikov"), ConfigError);
  const std::vector<double> c{0.0};
  CHECK_THROWS_AS(kernel_eval(g, a, c), DimensionError);
}

TEST_CASE("auxiliary draws") {
  Rng rng(3);
  const std::vector<double> x{1.0, -2.0};
  const KernelSpec tiny(KernelFamily::gaussian, 1e-9);
  const auto t = sample_auxiliary_covariate(tiny, x, rng);
  CHECK(t[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(t[1] == doctest::Approx(-2.0).epsilon(1e-6));

  const double h = 0.7;
  const KernelSpec g(KernelFamily::gaussian, h);
  const int m = 100000;
  std::vector<double> mean(2, 0.0);
  for (int i = 0; i < m; ++i) {
    const auto d = sample_auxiliary_covariate(g, x, rng);
    mean[0] += d[0];
    mean[1] += d[1];
  }
  CHECK(std::fabs(mean[0] / m - 1.0) <= 4.0 * h / std::sqrt(m));
  CHECK(std::fabs(mean[1] / m + 2.0) <= 4.0 * h / std::sqrt(m));

  const KernelSpec box(KernelFamily::boxcar, h);
  for (int i = 0; i < 5000; ++i) {
    const auto d = sample_auxiliary_covariate(box, x, rng);
    CHECK(std::sqrt(squared_distance(d, x)) <= h + 1e-12);
  }
}

TEST_CASE("auxiliary gaussian draws pass a KS check") {
  Rng rng(4);
  const std::vector<double> x{0.3};
  const double h = 1.7;
  const KernelSpec g(KernelFamily::gaussian, h);
  std::vector<double> z(10000);
  for (auto& v : z) v = (sample_auxiliary_covariate(g, x, rng)[0] - 0.3) / h;
  std::sort(z.begin(), z.end());
  double ks = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double f = normal_cdf(z[i]);
    ks = std::max({ks, std::fabs(f - static_cast<double>(i) / z.size()),
                   std::fabs(f - static_cast<double>(i + 1) / z.size())});
  }
  CHECK(ks < 0.02);
}

TEST_CASE("effective sample size limits and oracle") {
  Rng rng(5);
  const Matrix x = testing::gen_matrix(rng, 50, 2);
  CHECK(estimate_effective_sample_size(KernelSpec(KernelFamily::gaussian, 1e6), x) ==
        doctest::Approx(50.0).epsilon(1e-6));
  Matrix three(3, 1);
  three << 0.0, 1.0, 2.0;
  CHECK(estimate_effective_sample_size(KernelSpec(KernelFamily::boxcar, 5.0), three) ==
        doctest::Approx(3.0));
  for (double h : {0.3, 1.0, 2.5}) {
    const KernelSpec k(KernelFamily::gaussian, h);
    CHECK(estimate_effective_sample_size(k, x) == doctest::Approx(direct_neff(k, x)).epsilon(1e-10));
  }
}

TEST_CASE("property: effective sample size is nondecreasing in h") {
  Rng rng(6);
  for (int t = 0; t < 5; ++t) {
    const Matrix x = testing::gen_matrix(rng, 40, 1 + rng.below(4));
    const PairwiseDistances dist(x);
    double prev = 0.0;
    for (int k = 0; k < 50; ++k) {
      const double h = 0.01 * std::pow(1.25, k);
      const double v = estimate_effective_sample_size(KernelSpec(KernelFamily::gaussian, h), dist);
      CHECK(v >= prev - 1e-9);
      prev = v;
    }
  }
}

TEST_CASE("bandwidth search hits the target") {
  Rng rng(7);
  const Matrix x = testing::gen_matrix(rng, 500, 10);
  const double h = bandwidth_for_target_neff(40.0, x);
  const double v = estimate_effective_sample_size(KernelSpec(KernelFamily::gaussian, h), x);
  CHECK(v >= 39.5);
  CHECK(v <= 40.5);

  const Matrix doubled = 2.0 * x;
  const double h2 = bandwidth_for_target_neff(40.0, doubled);
  CHECK(h2 == doctest::Approx(2.0 * h).epsilon(1e-9));

  const Matrix small = testing::gen_matrix(rng, 30, 2);
  const double hn = bandwidth_for_target_neff(30.0, small);
  CHECK(estimate_effective_sample_size(KernelSpec(KernelFamily::gaussian, hn), small) >= 29.5);
  CHECK_THROWS_AS(bandwidth_for_target_neff(31.0, small), ConfigError);
  CHECK_THROWS_AS(bandwidth_for_target_neff(1.0, small), ConfigError);
}

}  // TEST_SUITE
