#include "conformal_kit/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "conformal_kit/errors.hpp"
#include "conformal_kit/log.hpp"

namespace ckit {

double pinball_loss(double s1, double s2, Level alpha) {
  if (s1 > s2) return alpha.coverage() * (s1 - s2);
  return alpha.alpha() * (s2 - s1);
}

BasisSpec BasisSpec::intercept_only() {
  BasisSpec b;
  b.add("intercept", [](std::span<const double>) { return 1.0; });
  return b;
}

BasisSpec BasisSpec::intercept_and_coordinates(std::size_t d) {
  BasisSpec b = intercept_only();
  for (std::size_t k = 0; k < d; ++k) {
    b.add("x" + std::to_string(k), [k](std::span<const double> x) { return x[k]; });
  }
  return b;
}

void BasisSpec::add(std::string name, std::function<double(std::span<const double>)> fn) {
  functions_.push_back({std::move(name), std::move(fn)});
}

std::vector<std::string> BasisSpec::names() const {
  std::vector<std::string> out;
  for (const auto& f : functions_) out.push_back(f.name);
  return out;
}

void BasisSpec::features(std::span<const double> x, std::span<double> out) const {
  for (std::size_t k = 0; k < functions_.size(); ++k) out[k] = functions_[k].fn(x);
}

Matrix BasisSpec::design(const Matrix& x) const {
  Matrix phi(x.rows(), static_cast<Eigen::Index>(d0()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    features(row_span(x, i), {phi.data() + i * phi.cols(), d0()});
  }
  return phi;
}

double default_norm_bound(std::span<const double> target) {
  double m = 0.0;
  for (double t : target) m = std::max(m, std::abs(t));
  return 10.0 * (1.0 + m);
}

double default_cc_lambda(std::size_t d0, std::size_t n) {
  const double nn = static_cast<double>(n);
  return std::pow(static_cast<double>(d0) * std::log(nn) / nn, 2.0 / 3.0);
}

namespace {

double objective_at(const Matrix& phi, std::span<const double> target, const Vector& kappa,
                    Level alpha, double lambda, Vector& pred) {
  pred.noalias() = phi * kappa;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < phi.rows(); ++i) {
    loss += pinball_loss(target[static_cast<std::size_t>(i)], pred[i], alpha);
  }
  return loss / static_cast<double>(phi.rows()) + lambda * kappa.squaredNorm();
}

void project(Vector& kappa, double bound) {
  const double norm = kappa.norm();
  if (norm > bound) kappa *= bound / norm;
}

}  // namespace

PinballModel fit_pinball_qr(const Matrix& x, std::span<const double> target, const BasisSpec& basis,
                            Level alpha, double lambda, std::optional<double> norm_bound,
                            const SolverConfig& solver) {
  const std::size_t n = target.size();
  if (n == 0) throw DomainError("empty data for quantile regression");
  if (static_cast<std::size_t>(x.rows()) != n) throw DimensionError("x rows differ from targets");
  if (basis.d0() == 0) throw ConfigError("basis must contain at least one function");
  if (n < basis.d0()) throw ConfigError("fewer data points than basis functions");
  if (!(lambda >= 0.0)) throw ConfigError("ridge penalty must be nonnegative");
  const double bound = norm_bound.value_or(default_norm_bound(target));
  if (!(bound > 0.0)) throw ConfigError("norm bound must be positive");

  const Matrix phi = basis.design(x);
  const auto [tmin, tmax] = std::minmax_element(target.begin(), target.end());
  double range = *tmax - *tmin;
  if (!(range > 0.0)) range = std::max(1.0, std::abs(*tmax));
  const double c = solver.step_scale * range;
  const int iters = std::max(1, solver.max_iterations);
  const int avg_start = iters / 2;
  const int stall_mark = iters - std::max(1, iters / 10);

  const auto d0 = static_cast<Eigen::Index>(basis.d0());
  Vector kappa = Vector::Zero(d0);
  Vector avg = Vector::Zero(d0);
  Vector best = kappa;
  Vector pred(phi.rows());
  Vector grad(d0);
  double best_obj = kInf;
  double best_at_mark = kInf;
  int avg_count = 0;
  const double a = alpha.alpha();
  const double inv_n = 1.0 / static_cast<double>(n);

  for (int t = 1; t <= iters; ++t) {
    pred.noalias() = phi * kappa;
    double loss = 0.0;
    grad.setZero();
    for (Eigen::Index i = 0; i < phi.rows(); ++i) {
      const double y = target[static_cast<std::size_t>(i)];
      const double r = pred[i];
      loss += pinball_loss(y, r, alpha);
      double g = 0.0;
      if (r > y) {
        g = a;
      } else if (r < y) {
        g = a - 1.0;
      }
      if (g != 0.0) grad.noalias() += g * phi.row(i).transpose();
    }
    const double obj = loss * inv_n + lambda * kappa.squaredNorm();
    if (obj < best_obj) {
      best_obj = obj;
      best = kappa;
    }
    if (t == stall_mark) best_at_mark = best_obj;
    grad *= inv_n;
    grad.noalias() += 2.0 * lambda * kappa;
    kappa -= (c / std::sqrt(static_cast<double>(t))) * grad;
    project(kappa, bound);
    if (t > avg_start) {
      ++avg_count;
      avg += (kappa - avg) / static_cast<double>(avg_count);
    }
  }

  const double avg_obj = objective_at(phi, target, avg, alpha, lambda, pred);
  const double final_obj = objective_at(phi, target, kappa, alpha, lambda, pred);
  if (final_obj < best_obj) {
    best_obj = final_obj;
    best = kappa;
  }
  const bool use_avg = avg_obj <= best_obj;
  const Vector& chosen = use_avg ? avg : best;
  const double chosen_obj = use_avg ? avg_obj : best_obj;
  const double overall_best = std::min(best_obj, avg_obj);

  const double scale = std::max(std::abs(overall_best), 1e-12);
  if (solver.fail_on_stall && (best_at_mark - overall_best) > solver.tolerance * scale) {
    throw NumericalError("pinball solver still improving after max iterations",
                         std::vector<double>(best.data(), best.data() + best.size()));
  }

  PinballModel model;
  model.basis = basis;
  model.kappa.assign(chosen.data(), chosen.data() + chosen.size());
  model.lambda = lambda;
  model.norm_bound = bound;
  model.alpha = alpha;
  model.objective = chosen_obj;
  model.iterations = iters;
  return model;
}

double predict_quantile(const PinballModel& model, std::span<const double> x) {
  std::vector<double> f(model.basis.d0());
  model.basis.features(x, f);
  double s = 0.0;
  for (std::size_t k = 0; k < f.size(); ++k) s += f[k] * model.kappa[k];
  return s;
}

double StepCdf::eval(double v) const {
  auto it = std::upper_bound(breakpoints.begin(), breakpoints.end(), v);
  if (it == breakpoints.begin()) return initial;
  return values[static_cast<std::size_t>(std::distance(breakpoints.begin(), it) - 1)];
}

ConditionalCdf::ConditionalCdf(KernelSpec kernel, const Matrix& x, std::span<const double> v)
    : kernel_(kernel) {
  if (v.empty()) throw DomainError("conditional CDF needs a nonempty training set");
  if (static_cast<std::size_t>(x.rows()) != v.size()) {
    throw DimensionError("x rows differ from training values");
  }
  const auto order = sort_order(v);
  x_.resize(x.rows(), x.cols());
  v_.resize(v.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    x_.row(static_cast<Eigen::Index>(k)) = x.row(static_cast<Eigen::Index>(order[k]));
    v_[k] = v[order[k]];
  }
}

StepCdf ConditionalCdf::at(std::span<const double> x, DegeneratePolicy policy) const {
  const std::size_t n = v_.size();
  if (x.size() != static_cast<std::size_t>(x_.cols())) {
    throw DimensionError("covariate dimension differs from training data");
  }
  std::vector<double> d2(n);
  for (std::size_t j = 0; j < n; ++j) {
    d2[j] = squared_distance(x, row_span(x_, static_cast<Eigen::Index>(j)));
  }
  // Gaussian weights relative to the nearest point.
  const double shift = kernel_.family == KernelFamily::gaussian && n > 0
                           ? *std::min_element(d2.begin(), d2.end())
                           : 0.0;
  std::vector<double> w(n);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    w[j] = kernel_.from_squared_distance(d2[j] - shift);
    total += w[j];
  }
  if (!(total > 0.0)) {
    if (policy == DegeneratePolicy::error) {
      throw DegenerateNeighborhoodError("all kernel weights are zero at the query covariate");
    }
    warn("degenerate kernel neighborhood; using the global empirical CDF");
    std::fill(w.begin(), w.end(), 1.0);
  }
  StepCdf out;
  double cum = 0.0;
  std::size_t j = 0;
  while (j < n) {
    const double b = v_[j];
    while (j < n && v_[j] == b) cum += w[j++];
    out.breakpoints.push_back(b);
    out.values.push_back(cum);
  }
  const double denom = cum;
  for (auto& val : out.values) val /= denom;
  return out;
}

double ConditionalCdf::eval(double v, std::span<const double> x, DegeneratePolicy policy) const {
  return at(x, policy).eval(v);
}

double conditional_cdf_eval(const ConditionalCdf& cdf, double v, std::span<const double> x) {
  return cdf.eval(v, x, DegeneratePolicy::error);
}

double GroupAdjustment::eval(std::span<const double> x) const {
  double s = coefficients.at(0);
  for (std::size_t k = 0; k < groups.size(); ++k) {
    if (groups[k].fn(x)) s += coefficients[k + 1];
  }
  return s;
}

GroupAdjustment fit_batchgcp(const Matrix& x, std::span<const double> scores,
                             std::vector<GroupIndicator> groups, Level alpha,
                             const SolverConfig& solver) {
  if (scores.empty()) throw DomainError("empty data for group adjustment");
  for (const auto& g : groups) {
    bool any = false;
    for (Eigen::Index i = 0; i < x.rows() && !any; ++i) any = g.fn(row_span(x, i));
    if (!any) throw ConfigError("group '" + g.name + "' is empty on the data");
  }
  BasisSpec basis = BasisSpec::intercept_only();
  for (const auto& g : groups) {
    auto fn = g.fn;
    basis.add(g.name, [fn](std::span<const double> v) { return fn(v) ? 1.0 : 0.0; });
  }
  const PinballModel model = fit_pinball_qr(x, scores, basis, alpha, 0.0, std::nullopt, solver);
  return {std::move(groups), model.kappa};
}

double LinearMean::predict(std::span<const double> x) const {
  if (x.size() + 1 != coef.size()) throw DimensionError("mean model dimension mismatch");
  double s = coef[0];
  for (std::size_t k = 0; k < x.size(); ++k) s += coef[k + 1] * x[k];
  return s;
}

LinearMean LinearMean::fit(const Matrix& x, std::span<const double> y) {
  if (static_cast<std::size_t>(x.rows()) != y.size()) throw DimensionError("x rows differ from y");
  if (y.size() < static_cast<std::size_t>(x.cols()) + 1) {
    throw ConfigError("too few points for least squares");
  }
  Eigen::MatrixXd a(x.rows(), x.cols() + 1);
  a.col(0).setOnes();
  a.rightCols(x.cols()) = x;
  const Eigen::Map<const Eigen::VectorXd> b(y.data(), static_cast<Eigen::Index>(y.size()));
  const Eigen::VectorXd coef = a.colPivHouseholderQr().solve(b);
  return {std::vector<double>(coef.data(), coef.data() + coef.size())};
}

}  // namespace ckit
