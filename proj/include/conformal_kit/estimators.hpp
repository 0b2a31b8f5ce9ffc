#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "conformal_kit/core.hpp"
#include "conformal_kit/kernels.hpp"
#include "conformal_kit/linalg.hpp"

namespace ckit {

double pinball_loss(double s1, double s2, Level alpha);

struct Feature {
  std::string name;
  std::function<double(std::span<const double>)> fn;
};

class BasisSpec {
 public:
  static BasisSpec intercept_only();
  static BasisSpec intercept_and_coordinates(std::size_t d);

  void add(std::string name, std::function<double(std::span<const double>)> fn);
  std::size_t d0() const { return functions_.size(); }
  const std::vector<Feature>& functions() const { return functions_; }
  std::vector<std::string> names() const;

  void features(std::span<const double> x, std::span<double> out) const;
  Matrix design(const Matrix& x) const;

 private:
  std::vector<Feature> functions_;
};

struct SolverConfig {
  int max_iterations = 2000;
  double step_scale = 0.5;
  double tolerance = 1e-3;
  bool fail_on_stall = true;
};

struct PinballModel {
  BasisSpec basis;
  std::vector<double> kappa;
  double lambda = 0.0;
  double norm_bound = 1.0;
  Level alpha{0.1};
  double objective = 0.0;
  int iterations = 0;
};

double default_norm_bound(std::span<const double> target);
double default_cc_lambda(std::size_t d0, std::size_t n);

PinballModel fit_pinball_qr(const Matrix& x, std::span<const double> target, const BasisSpec& basis,
                            Level alpha, double lambda = 0.0,
                            std::optional<double> norm_bound = std::nullopt,
                            const SolverConfig& solver = {});

double predict_quantile(const PinballModel& model, std::span<const double> x);

// Right-continuous step function on ascending distinct breakpoints; `initial` below the first.
struct StepCdf {
  double initial = 0.0;
  std::vector<double> breakpoints;
  std::vector<double> values;

  double eval(double v) const;
};

enum class DegeneratePolicy { error, global_ecdf };

class ConditionalCdf {
 public:
  ConditionalCdf(KernelSpec kernel, const Matrix& x, std::span<const double> v);

  const KernelSpec& kernel() const { return kernel_; }
  std::size_t size() const { return v_.size(); }

  // Nadaraya-Watson CDF of v given x as a step function.
  StepCdf at(std::span<const double> x, DegeneratePolicy policy = DegeneratePolicy::error) const;
  double eval(double v, std::span<const double> x,
              DegeneratePolicy policy = DegeneratePolicy::error) const;

 private:
  KernelSpec kernel_;
  Matrix x_;
  std::vector<double> v_;
};

double conditional_cdf_eval(const ConditionalCdf& cdf, double v, std::span<const double> x);

struct GroupIndicator {
  std::string name;
  std::function<bool(std::span<const double>)> fn;
};

struct GroupAdjustment {
  std::vector<GroupIndicator> groups;
  std::vector<double> coefficients;

  double eval(std::span<const double> x) const;
};

GroupAdjustment fit_batchgcp(const Matrix& x, std::span<const double> scores,
                             std::vector<GroupIndicator> groups, Level alpha,
                             const SolverConfig& solver = {});

struct LinearMean {
  std::vector<double> coef;

  double predict(std::span<const double> x) const;
  static LinearMean fit(const Matrix& x, std::span<const double> y);
};

}  // namespace ckit
