#include "conformal_kit/hier.hpp"

#include <algorithm>
#include <cmath>

#include "conformal_kit/errors.hpp"

namespace ckit {

void HierData::validate() const {
  if (branches < 2) throw DomainError("hierarchical layout needs at least 2 branches");
  if (per_branch < 2) throw DomainError("hierarchical layout needs at least 2 points per branch");
  if (static_cast<std::size_t>(x.rows()) != size() || y.size() != size()) {
    throw DimensionError("hierarchical data is not rectangular");
  }
}

std::string to_string(BranchScoreKind kind) {
  return kind == BranchScoreKind::dcp_branch ? "dcp_branch" : "cqr_branch";
}

BranchScoreKind branch_score_kind_from_string(const std::string& name) {
  if (name == "dcp_branch" || name == "dcp") return BranchScoreKind::dcp_branch;
  if (name == "cqr_branch" || name == "cqr") return BranchScoreKind::cqr_branch;
  throw ConfigError("unknown branch score kind: " + name);
}

namespace {

struct QuantilePair {
  PinballModel lower;
  PinballModel upper;

  double score(std::span<const double> x, double y) const {
    return std::max(y - predict_quantile(upper, x), predict_quantile(lower, x) - y);
  }
};

QuantilePair fit_quantiles(const Matrix& xb, std::span<const double> yb, Level level,
                           const HierOptions& opts, std::size_t k) {
  const BasisSpec basis = BasisSpec::intercept_and_coordinates(static_cast<std::size_t>(xb.cols()));
  if (static_cast<std::size_t>(xb.rows()) < basis.d0()) {
    throw ConfigError("branch " + std::to_string(k) + " has fewer points than basis functions");
  }
  const double a = level.alpha();
  return {fit_pinball_qr(xb, yb, basis, Level(1.0 - a / 2.0), 0.0, std::nullopt, opts.solver),
          fit_pinball_qr(xb, yb, basis, Level(a / 2.0), 0.0, std::nullopt, opts.solver)};
}

// Kernel CDF sums for the points of one branch: num_a = sum_b K_ab 1{y_b <= y_a}.
struct BranchSums {
  std::vector<double> kw;  // count x count kernel matrix
  std::vector<double> num;
  std::vector<double> den;
};

BranchSums branch_sums(const HierData& data, std::size_t first, std::size_t count,
                       const HierOptions& opts, bool self) {
  BranchSums s;
  s.kw.assign(count * count, 0.0);
  for (std::size_t a = 0; a < count; ++a) {
    for (std::size_t b = 0; b < count; ++b) {
      s.kw[a * count + b] = opts.kernel.from_squared_distance(
          squared_distance(data.row(first + a), data.row(first + b)));
    }
  }
  s.num.assign(count, 0.0);
  s.den.assign(count, 0.0);
  for (std::size_t a = 0; a < count; ++a) {
    for (std::size_t b = 0; b < count; ++b) {
      if (a == b && !self) continue;
      const double w = s.kw[a * count + b];
      s.den[a] += w;
      if (data.y[first + b] <= data.y[first + a]) s.num[a] += w;
    }
  }
  return s;
}

double dcp_value(double num, double den) {
  if (!(den > 0.0)) throw DegenerateNeighborhoodError("branch kernel weights vanish");
  return std::fabs(num / den - 0.5);
}

std::vector<double> score_all(const HierData& data, BranchScoreKind kind, Level level,
                              const HierOptions& opts) {
  data.validate();
  std::vector<double> out;
  out.reserve(data.size() - 1);
  const bool loo = opts.scoring == HierScoring::leave_one_out;
  for (std::size_t k = 0; k < data.branches; ++k) {
    const std::size_t first = data.index(k, 0);
    const std::size_t count = k + 1 == data.branches ? data.per_branch - 1 : data.per_branch;
    if (loo && count < 2) throw ConfigError("leave-one-out scoring needs at least 2 points per branch");
    if (kind == BranchScoreKind::dcp_branch) {
      const BranchSums s = branch_sums(data, first, count, opts, !loo);
      for (std::size_t a = 0; a < count; ++a) out.push_back(dcp_value(s.num[a], s.den[a]));
      continue;
    }
    const Matrix xb = data.x.middleRows(static_cast<Eigen::Index>(first), static_cast<Eigen::Index>(count));
    const std::span<const double> yb(data.y.data() + first, count);
    if (!loo) {
      const QuantilePair q = fit_quantiles(xb, yb, level, opts, k);
      for (std::size_t a = 0; a < count; ++a) out.push_back(q.score(data.row(first + a), yb[a]));
      continue;
    }
    for (std::size_t a = 0; a < count; ++a) {
      Matrix xo(static_cast<Eigen::Index>(count - 1), xb.cols());
      std::vector<double> yo;
      yo.reserve(count - 1);
      for (std::size_t b = 0, r = 0; b < count; ++b) {
        if (b == a) continue;
        xo.row(static_cast<Eigen::Index>(r++)) = xb.row(static_cast<Eigen::Index>(b));
        yo.push_back(yb[b]);
      }
      const QuantilePair q = fit_quantiles(xo, yo, level, opts, k);
      out.push_back(q.score(data.row(first + a), yb[a]));
    }
  }
  return out;
}

double uniform_threshold(const std::vector<double>& scores, Level level) {
  WeightedScoreSample sample{scores, std::vector<double>(scores.size(), 1.0), 1.0};
  return weighted_quantile(sample, level);
}

std::vector<double> calibration_subset(const HierData& data, const std::vector<double>& all,
                                       HierCalibration calibration) {
  if (calibration == HierCalibration::pooled) return all;
  const std::size_t first = data.index(data.branches - 1, 0);
  return {all.begin() + static_cast<std::ptrdiff_t>(first), all.end()};
}

// Uniform-weight quantile with one inf atom over fixed (sorted) plus varying scores.
double union_threshold(const std::vector<double>& fixed_sorted, std::vector<double> varying,
                       Level level) {
  std::sort(varying.begin(), varying.end());
  const double total = static_cast<double>(fixed_sorted.size() + varying.size() + 1);
  const double target = level.coverage();
  std::size_t k = static_cast<std::size_t>(std::ceil(target * total));
  while (k > 0 && static_cast<double>(k - 1) / total >= target) --k;
  while (static_cast<double>(k) / total < target) ++k;
  if (k == 0) k = 1;
  if (k > fixed_sorted.size() + varying.size()) return kInf;
  // k-th smallest of the merged sequences.
  std::size_t i = 0, j = 0;
  double value = 0.0;
  for (std::size_t step = 0; step < k; ++step) {
    if (j < varying.size() && (i >= fixed_sorted.size() || varying[j] < fixed_sorted[i])) {
      value = varying[j++];
    } else {
      value = fixed_sorted[i++];
    }
  }
  return value;
}

Matrix test_branch_x(const HierData& data) {
  return data.x.middleRows(static_cast<Eigen::Index>(data.index(data.branches - 1, 0)),
                           static_cast<Eigen::Index>(data.per_branch - 1));
}

}  // namespace

std::vector<double> hierarchical_calibration_scores(const HierData& data, BranchScoreKind kind,
                                                    Level level, const HierOptions& opts) {
  return score_all(data, kind, level, opts);
}

double hierarchical_test_score(const HierData& data, BranchScoreKind kind, Level level, double y,
                               const HierOptions& opts) {
  data.validate();
  const std::size_t first = data.index(data.branches - 1, 0);
  const std::span<const double> yb(data.y.data() + first, data.per_branch - 1);
  const auto xt = data.row(data.test_index());
  if (kind == BranchScoreKind::dcp_branch) {
    return std::fabs(ConditionalCdf(opts.kernel, test_branch_x(data), yb).eval(y, xt) - 0.5);
  }
  return fit_quantiles(test_branch_x(data), yb, level, opts, data.branches - 1).score(xt, y);
}

PredictionRegion hierarchical_region(const HierData& data, BranchScoreKind kind, Level level,
                                     std::span<const double> y_grid, const HierOptions& opts) {
  if (y_grid.size() < 8) throw ConfigError("grid resolution must be at least 8");
  const std::vector<double> all = score_all(data, kind, level, opts);
  const std::size_t first = data.index(data.branches - 1, 0);
  const std::size_t n_obs = data.per_branch - 1;
  const std::span<const double> yb(data.y.data() + first, n_obs);
  const auto xt = data.row(data.test_index());
  std::vector<bool> mask(y_grid.size(), false);

  if (opts.mode == HierMode::held_out) {
    const double q = uniform_threshold(calibration_subset(data, all, opts.calibration), level);
    if (kind == BranchScoreKind::dcp_branch) {
      const StepCdf f = ConditionalCdf(opts.kernel, test_branch_x(data), yb).at(xt);
      for (std::size_t g = 0; g < y_grid.size(); ++g) {
        mask[g] = std::fabs(f.eval(y_grid[g]) - 0.5) <= q;
      }
    } else {
      const QuantilePair m = fit_quantiles(test_branch_x(data), yb, level, opts, data.branches - 1);
      for (std::size_t g = 0; g < y_grid.size(); ++g) mask[g] = m.score(xt, y_grid[g]) <= q;
    }
    return PredictionRegion::from_grid_mask(y_grid, mask);
  }

  if (kind != BranchScoreKind::dcp_branch) {
    throw UnsupportedError("trial-inclusive mode is only available for dcp_branch");
  }
  const bool self = opts.scoring == HierScoring::in_sample;
  // Test branch including the test row; index n_obs is the test point.
  const BranchSums s = branch_sums(data, first, n_obs + 1, opts, self);
  const std::size_t c = n_obs + 1;
  double t_den = 0.0;
  double t_base = 0.0;
  for (std::size_t b = 0; b < n_obs; ++b) t_den += s.kw[n_obs * c + b];
  if (self) {
    t_den += s.kw[n_obs * c + n_obs];
    t_base = s.kw[n_obs * c + n_obs];
  }
  std::vector<double> fixed;
  if (opts.calibration == HierCalibration::pooled) {
    fixed.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(first));
    std::sort(fixed.begin(), fixed.end());
  }
  std::vector<double> scores(n_obs);
  for (std::size_t g = 0; g < y_grid.size(); ++g) {
    const double yv = y_grid[g];
    for (std::size_t a = 0; a < n_obs; ++a) {
      // Sums over observed points only, plus the trial point's contribution.
      double num = s.num[a];
      double den = s.den[a] - s.kw[a * c + n_obs];
      if (data.y[first + n_obs] <= data.y[first + a]) num -= s.kw[a * c + n_obs];
      const double wt = s.kw[a * c + n_obs];
      scores[a] = dcp_value(num + (yv <= yb[a] ? wt : 0.0), den + wt);
    }
    double t_num = t_base;
    for (std::size_t b = 0; b < n_obs; ++b) {
      if (yb[b] <= yv) t_num += s.kw[n_obs * c + b];
    }
    mask[g] = dcp_value(t_num, t_den) <= union_threshold(fixed, scores, level);
  }
  return PredictionRegion::from_grid_mask(y_grid, mask);
}

}  // namespace ckit
