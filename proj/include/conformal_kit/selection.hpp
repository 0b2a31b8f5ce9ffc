#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "conformal_kit/core.hpp"
#include "conformal_kit/kernels.hpp"
#include "conformal_kit/methods.hpp"

namespace ckit {

enum class SelectionRule { avg_loss, avg_rank_loss, eff_size, rand };

std::string to_string(SelectionRule r);
SelectionRule selection_rule_from_string(const std::string& name);
const std::vector<SelectionRule>& all_selection_rules();

double zeta_residual(double score, double threshold, Level alpha);

struct ElRow {
  double lambda = 0.0;
  double contribution = 0.0;
  double residual = 0.0;
  bool degenerate = false;
};

// Root of g(l) = sum_j a_j z_j / (c + l z_j) on (-c/alpha, c/(1-alpha)) with z_j in {alpha, alpha-1}.
ElRow el_row(std::span<const double> a, std::span<const double> zeta, double c, Level alpha);

struct ElLoss {
  double total = 0.0;
  std::size_t degenerate_rows = 0;
  std::vector<ElRow> rows;
};

// Localized EL loss from residuals zeta at covariates x, with a_ij = K_ij / sum_l K_il.
ElLoss localized_el_loss(const Matrix& x, std::span<const double> zeta, const KernelSpec& kernel,
                         Level alpha, std::optional<double> c = std::nullopt);

// Efficient-mode loss of a calibrated candidate on its own calibration set.
ElLoss localized_el_loss(const CalibratedPredictor& candidate, const KernelSpec& kernel);

// zeta_j on the calibration set with q from uniform weights and a unit infinite atom.
std::vector<double> calibration_zeta(const CalibratedPredictor& candidate);

class CandidatePool {
 public:
  CandidatePool(std::vector<PredictorSpec> candidates, Dataset calib, Level level);

  std::size_t size() const { return predictors_.size(); }
  Level level() const { return level_; }
  const Dataset& calibration() const { return calib_; }
  const std::vector<PredictorSpec>& specs() const { return specs_; }
  const CalibratedPredictor& predictor(std::size_t k) const { return predictors_[k]; }
  std::vector<std::string> labels() const;

 private:
  std::vector<PredictorSpec> specs_;
  Dataset calib_;
  Level level_;
  std::vector<CalibratedPredictor> predictors_;
};

struct SelectionOptions {
  std::vector<double> targets = {30.0, 40.0, 50.0};
  KernelFamily family = KernelFamily::gaussian;
  // Covariates for the bandwidth search (default: calibration covariates).
  std::optional<Matrix> bandwidth_covariates;
  std::optional<double> reference_n;
  std::optional<std::vector<double>> bandwidths;
  bool compute_lengths = true;
};

struct SelectionReport {
  std::vector<std::string> labels;
  std::vector<double> targets;
  std::vector<double> bandwidths;
  std::vector<std::vector<double>> losses;
  std::vector<std::vector<std::size_t>> degenerate_rows;
  std::vector<std::vector<double>> ranks;
  std::vector<double> mean_loss;
  std::vector<double> mean_rank;
  std::vector<double> mean_length;
  std::map<std::string, std::size_t> chosen_by_rule;
  SelectionRule rule = SelectionRule::avg_loss;
  std::size_t chosen = 0;

  const std::string& chosen_label() const { return labels.at(chosen); }
};

// Midranks (1-based) of values; ties share the average rank.
std::vector<double> midranks(std::span<const double> values);

SelectionReport select(const CandidatePool& pool, SelectionRule rule, Rng& rng,
                       const SelectionOptions& opts = {});

PredictionRegion efficient_selected_region(const CandidatePool& pool, std::span<const double> x_test,
                                           Level level, SelectionRule rule, Rng& rng,
                                           const SelectionOptions& opts = {},
                                           const RegionOptions& region = {});

// Trial-y re-selection on the grid (AvgLoss / AvgRankLoss), test pair included in the loss.
PredictionRegion exact_selected_region(const CandidatePool& pool, std::span<const double> x_test,
                                       SelectionRule rule, const SelectionReport& efficient,
                                       const RegionOptions& region = {});

}  // namespace ckit
