#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "conformal_kit/core.hpp"
#include "conformal_kit/dgp.hpp"
#include "conformal_kit/estimators.hpp"
#include "conformal_kit/kernels.hpp"
#include "conformal_kit/linalg.hpp"

namespace ckit {

enum class BaseKind { response, residual };

// v(x, y): the response itself or |y - mu(x)|.
struct BaseScore {
  BaseKind kind = BaseKind::residual;
  std::shared_ptr<const LinearMean> mean;

  double eval(std::span<const double> x, double y) const;
  double center(std::span<const double> x) const;
};

enum class ScoreKind {
  residual,
  cqr_two_sided,
  cqr_one_sided,
  dcp,
  glcp_identity,
  lcp_rank,
  cc_centered,
  batchgcp,
  custom
};

std::string to_string(ScoreKind k);

struct CcConfig {
  std::optional<BasisSpec> basis;
  std::optional<double> lambda;
  std::optional<double> norm_bound;
  SolverConfig solver;
};

using ScoreFn = std::function<double(std::span<const double>, double)>;

// Whether a point's own kernel weight K(x, x) enters its localized rank.
enum class LcpSelf { include, exclude };

struct ScoreSpec {
  ScoreKind kind = ScoreKind::residual;
  BaseScore base;
  std::shared_ptr<const PinballModel> quantile;
  std::shared_ptr<const PinballModel> lower;
  std::shared_ptr<const PinballModel> upper;
  std::shared_ptr<const ConditionalCdf> cdf;
  std::optional<KernelSpec> kernel;
  LcpSelf lcp_self = LcpSelf::include;
  CcConfig cc;
  std::vector<GroupIndicator> groups;
  std::shared_ptr<const GroupAdjustment> adjustment;
  ScoreFn custom;

  void validate() const;
};

enum class WeightKind { uniform, density_ratio, randomized_local, shift_local };

struct WeightSpec {
  WeightKind kind = WeightKind::uniform;
  CovariateFn ratio;
  std::optional<KernelSpec> kernel;

  bool randomized() const {
    return kind == WeightKind::randomized_local || kind == WeightKind::shift_local;
  }
  void validate() const;
};

enum class CalibrationMode { fast, exact };

struct PredictorSpec {
  std::string name;
  ScoreSpec score;
  WeightSpec weight;
  CalibrationMode mode = CalibrationMode::fast;

  void validate() const;
};

struct FittedComponents {
  std::shared_ptr<const LinearMean> mean;
  std::shared_ptr<const PinballModel> quantile;
  std::shared_ptr<const PinballModel> lower;
  std::shared_ptr<const PinballModel> upper;
  std::shared_ptr<const ConditionalCdf> response_cdf;
  std::shared_ptr<const ConditionalCdf> score_cdf;
  std::vector<GroupIndicator> groups;
  CcConfig cc;
  LcpSelf lcp_self = LcpSelf::include;
};

const std::vector<std::string>& method_names();
bool is_shift_method(const std::string& method);

PredictorSpec make_predictor(const std::string& method, const FittedComponents& components,
                             std::optional<KernelSpec> kernel = std::nullopt,
                             CovariateFn ratio = {},
                             CalibrationMode mode = CalibrationMode::fast);

struct RegionOptions {
  std::optional<Interval> y_domain;
  int resolution = 512;
  // Auxiliary covariate for randomized weights.
  std::vector<double> auxiliary;
  PValueConvention convention = PValueConvention::dual;
};

// Calibration-side state for one method at one level; immutable and shareable.
class CalibratedPredictor {
 public:
  CalibratedPredictor(PredictorSpec spec, Dataset calib, Level level);

  const PredictorSpec& spec() const { return spec_; }
  const Dataset& calibration() const { return calib_; }
  Level level() const { return level_; }

  PredictionRegion region(std::span<const double> x, const RegionOptions& opts = {}) const;
  double p_value(std::span<const double> x, double y, const RegionOptions& opts = {}) const;

  // Fast-mode calibration scores in calibration order.
  const std::vector<double>& calibration_scores() const { return scores_; }
  // Fast-mode score of a test pair and the threshold q at x.
  double test_score(std::span<const double> x, double y) const;
  double threshold(std::span<const double> x, const RegionOptions& opts = {}) const;

  std::vector<double> draw_auxiliary(std::span<const double> x, Rng& rng) const;

 private:
  struct TestWeights {
    std::vector<double> sorted;
    double test = 1.0;
  };

  TestWeights weights_for(std::span<const double> x, const RegionOptions& opts) const;
  std::vector<double> raw_weights(std::span<const double> x, const RegionOptions& opts,
                                  double& test_weight) const;
  double center(std::span<const double> x) const;
  StepCdf step_score(std::span<const double> x) const;
  PredictionRegion analytic_region(std::span<const double> x, double q) const;
  PredictionRegion vset_to_region(std::span<const double> x, std::vector<Interval> vset) const;
  PredictionRegion grid_region(std::span<const double> x, const RegionOptions& opts) const;
  // Exact-mode calibration/test scores with the trial pair included.
  void exact_scores(std::span<const double> x, double y, std::vector<double>& cal,
                    double& test) const;

  PredictorSpec spec_;
  Dataset calib_;
  Level level_;
  std::vector<double> base_;
  std::vector<double> scores_;
  std::vector<std::size_t> order_;
  std::vector<double> sorted_scores_;
  std::vector<double> fixed_weights_;
  std::shared_ptr<const PinballModel> cc_model_;
  std::shared_ptr<const GroupAdjustment> adjustment_;
  std::vector<std::size_t> base_order_;
  std::vector<double> sorted_base_;
  std::vector<double> lcp_num_;
  std::vector<double> lcp_den_;
};

PredictionRegion build_prediction_region(const PredictorSpec& spec, const Dataset& calib,
                                         std::span<const double> x_test, Level level,
                                         const RegionOptions& opts = {});

double conformal_p_value(const PredictorSpec& spec, const Dataset& calib,
                         std::span<const double> x_test, double y_test, Level level,
                         const RegionOptions& opts = {});

// |Q(1-a; F_{s*|X=t}) - Q(1-a; F_{w o s*})| for the oracle version of the score.
struct GapOptions {
  std::size_t monte_carlo = 20000;
  std::uint64_t seed = 1;
};

double oracle_conditional_quantile_gap(const PredictorSpec& spec, const DgpSpec& dgp,
                                       std::span<const double> t, Level level,
                                       const GapOptions& opts = {});

}  // namespace ckit
