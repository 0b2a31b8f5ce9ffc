#include "conformal_kit/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "conformal_kit/errors.hpp"

namespace ckit {

Level::Level(double alpha) : alpha_(alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw DomainError("level alpha must lie in (0,1), got " + std::to_string(alpha));
  }
}

void WeightedScoreSample::validate() const {
  if (scores.size() != weights.size()) {
    throw DomainError("scores and weights differ in length");
  }
  double total = infinite_weight;
  if (!(infinite_weight >= 0.0) || !std::isfinite(infinite_weight)) {
    throw DomainError("infinite_weight must be finite and nonnegative");
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw DomainError("non-finite score");
    if (!(weights[i] >= 0.0) || !std::isfinite(weights[i])) {
      throw DomainError("weights must be finite and nonnegative");
    }
    total += weights[i];
  }
  if (!(total > 0.0)) throw DomainError("zero total mass");
}

std::vector<std::size_t> sort_order(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  return idx;
}

namespace {

double mass(std::span<const double> weights, double extra) {
  double total = 0.0;
  for (double w : weights) total += w;
  return total + extra;
}

}  // namespace

double weighted_quantile_sorted(std::span<const double> sorted_scores,
                                std::span<const double> weights, double infinite_weight,
                                Level level) {
  const double total = mass(weights, infinite_weight);
  if (!(total > 0.0)) throw DomainError("zero total mass");
  const double target = level.coverage();
  const std::size_t n = sorted_scores.size();
  double cum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    const double s = sorted_scores[i];
    while (i < n && sorted_scores[i] == s) cum += weights[i++];
    if (cum / total >= target) return s;
  }
  return kInf;
}

double weighted_quantile(const WeightedScoreSample& sample, Level level) {
  sample.validate();
  const auto order = sort_order(sample.scores);
  std::vector<double> s(order.size());
  std::vector<double> w(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    s[k] = sample.scores[order[k]];
    w[k] = sample.weights[order[k]];
  }
  return weighted_quantile_sorted(s, w, sample.infinite_weight, level);
}

double weighted_p_value_sorted(std::span<const double> sorted_scores,
                               std::span<const double> weights, double test_score,
                               double test_weight, PValueConvention convention) {
  const double total = mass(weights, test_weight);
  if (!(total > 0.0)) throw DomainError("zero total mass");
  const std::size_t n = sorted_scores.size();
  if (convention == PValueConvention::dual) {
    double below = 0.0;
    for (std::size_t i = 0; i < n && sorted_scores[i] < test_score; ++i) below += weights[i];
    return std::clamp(1.0 - below / total, 0.0, 1.0);
  }
  double above = 0.0;
  for (std::size_t i = n; i-- > 0 && sorted_scores[i] > test_score;) above += weights[i];
  return std::clamp(above / total, 0.0, 1.0);
}

double weighted_p_value(std::span<const double> scores, std::span<const double> weights,
                        double test_score, double test_weight, PValueConvention convention) {
  if (scores.size() != weights.size()) throw DomainError("scores and weights differ in length");
  if (scores.empty()) throw DomainError("empty calibration set");
  const auto order = sort_order(scores);
  std::vector<double> s(order.size());
  std::vector<double> w(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    s[k] = scores[order[k]];
    w[k] = weights[order[k]];
  }
  return weighted_p_value_sorted(s, w, test_score, test_weight, convention);
}

PredictionRegion::PredictionRegion(std::vector<Interval> intervals, Representation rep,
                                   int grid_resolution)
    : intervals_(std::move(intervals)), rep_(rep), grid_resolution_(grid_resolution) {
  std::sort(intervals_.begin(), intervals_.end(),
            [](const Interval& a, const Interval& b) { return a.lo < b.lo; });
  std::vector<Interval> merged;
  for (const auto& iv : intervals_) {
    if (!(iv.lo <= iv.hi)) continue;
    if (!merged.empty() && iv.lo <= merged.back().hi) {
      merged.back().hi = std::max(merged.back().hi, iv.hi);
    } else {
      merged.push_back(iv);
    }
  }
  intervals_ = std::move(merged);
}

PredictionRegion PredictionRegion::whole_line() {
  return PredictionRegion({{-kInf, kInf}}, Representation::analytic);
}

PredictionRegion PredictionRegion::from_grid_mask(std::span<const double> grid,
                                                  const std::vector<bool>& accepted) {
  if (grid.size() != accepted.size()) throw DomainError("grid and mask differ in length");
  std::vector<Interval> out;
  std::size_t i = 0;
  while (i < grid.size()) {
    if (!accepted[i]) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    while (i + 1 < grid.size() && accepted[i + 1]) ++i;
    out.push_back({grid[start], grid[i]});
    ++i;
  }
  return PredictionRegion(std::move(out), Representation::grid, static_cast<int>(grid.size()));
}

bool PredictionRegion::contains(double y) const {
  auto it = std::upper_bound(intervals_.begin(), intervals_.end(), y,
                             [](double v, const Interval& iv) { return v < iv.lo; });
  if (it == intervals_.begin()) return false;
  return std::prev(it)->contains(y);
}

double PredictionRegion::length() const {
  double total = 0.0;
  for (const auto& iv : intervals_) total += iv.length();
  return total;
}

std::vector<double> make_grid(Interval domain, int resolution) {
  if (resolution < 8) {
    throw ConfigError("grid resolution must be at least 8, got " + std::to_string(resolution));
  }
  if (!std::isfinite(domain.lo) || !std::isfinite(domain.hi) || !(domain.lo < domain.hi)) {
    throw DomainError("y_domain must be a finite nonempty interval");
  }
  std::vector<double> g(static_cast<std::size_t>(resolution));
  const double step = (domain.hi - domain.lo) / (resolution - 1);
  for (int k = 0; k < resolution; ++k) g[static_cast<std::size_t>(k)] = domain.lo + step * k;
  g.back() = domain.hi;
  return g;
}

namespace {

double linear_quantile(const std::vector<double>& sorted, double p) {
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

Interval default_y_domain(std::span<const double> y) {
  if (y.empty()) throw DomainError("empty calibration set");
  std::vector<double> s(y.begin(), y.end());
  std::sort(s.begin(), s.end());
  double iqr = linear_quantile(s, 0.75) - linear_quantile(s, 0.25);
  if (!(iqr > 0.0)) iqr = std::max(1.0, s.back() - s.front());
  return {s.front() - 4.0 * iqr, s.back() + 4.0 * iqr};
}

}  // namespace ckit
