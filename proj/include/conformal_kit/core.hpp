#pragma once

#include <limits>
#include <span>
#include <vector>

namespace ckit {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

class Level {
 public:
  explicit Level(double alpha);
  double alpha() const { return alpha_; }
  double coverage() const { return 1.0 - alpha_; }

 private:
  double alpha_;
};

struct WeightedScoreSample {
  std::vector<double> scores;
  std::vector<double> weights;
  double infinite_weight = 0.0;

  void validate() const;
};

// inf{u : sum_{s_i <= u} w_i / (sum w + w_inf) >= 1 - alpha}; +inf if never reached.
double weighted_quantile(const WeightedScoreSample& sample, Level level);

// Same, for scores already sorted ascending with weights aligned to them.
double weighted_quantile_sorted(std::span<const double> sorted_scores,
                                std::span<const double> weights,
                                double infinite_weight, Level level);

enum class PValueConvention { dual, strict };

// Weighted conformal p-value of a test score against calibration scores.
// dual:   (sum_{s_i >= s_t} w_i + w_t) / W, exactly dual to the quantile set.
// strict: sum_{s_i > s_t} w_i / W.
double weighted_p_value(std::span<const double> scores, std::span<const double> weights,
                        double test_score, double test_weight,
                        PValueConvention convention = PValueConvention::dual);

double weighted_p_value_sorted(std::span<const double> sorted_scores,
                               std::span<const double> weights, double test_score,
                               double test_weight,
                               PValueConvention convention = PValueConvention::dual);

// Sort order of scores (stable, ascending).
std::vector<std::size_t> sort_order(std::span<const double> scores);

struct Interval {
  double lo;
  double hi;

  bool contains(double y) const { return lo <= y && y <= hi; }
  double length() const { return hi - lo; }
};

enum class Representation { analytic, grid };

class PredictionRegion {
 public:
  PredictionRegion() = default;
  PredictionRegion(std::vector<Interval> intervals, Representation rep, int grid_resolution = 0);

  static PredictionRegion empty() { return {}; }
  static PredictionRegion whole_line();
  static PredictionRegion from_grid_mask(std::span<const double> grid,
                                         const std::vector<bool>& accepted);

  const std::vector<Interval>& intervals() const { return intervals_; }
  Representation representation() const { return rep_; }
  int grid_resolution() const { return grid_resolution_; }

  bool is_empty() const { return intervals_.empty(); }
  bool contains(double y) const;
  double length() const;

 private:
  std::vector<Interval> intervals_;
  Representation rep_ = Representation::analytic;
  int grid_resolution_ = 0;
};

std::vector<double> make_grid(Interval domain, int resolution);

// Default grid domain [min y - 4 IQR, max y + 4 IQR].
Interval default_y_domain(std::span<const double> y);

}  // namespace ckit
