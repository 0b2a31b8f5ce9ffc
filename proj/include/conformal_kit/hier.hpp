#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "conformal_kit/core.hpp"
#include "conformal_kit/estimators.hpp"
#include "conformal_kit/kernels.hpp"
#include "conformal_kit/linalg.hpp"

namespace ckit {

// K branches of N observations stored branch-major; row K*N-1 is the test point.
struct HierData {
  std::size_t branches = 0;
  std::size_t per_branch = 0;
  Matrix x;
  std::vector<double> y;

  std::size_t size() const { return branches * per_branch; }
  std::size_t test_index() const { return size() - 1; }
  std::size_t index(std::size_t k, std::size_t i) const { return k * per_branch + i; }
  std::span<const double> row(std::size_t i) const {
    return row_span(x, static_cast<Eigen::Index>(i));
  }
  void validate() const;
};

enum class BranchScoreKind { dcp_branch, cqr_branch };

std::string to_string(BranchScoreKind kind);
BranchScoreKind branch_score_kind_from_string(const std::string& name);

enum class HierCalibration { pooled, own_branch };

enum class HierMode {
  // Test branch fitted on its N-1 observed points.
  held_out,
  // Test branch refitted with the trial response for every grid point (dcp_branch only).
  trial_inclusive,
};

enum class HierScoring {
  // Each observed point scored by its branch fit with the point left out.
  leave_one_out,
  // Branches k < K scored in-sample by a fit on all N points.
  in_sample,
};

struct HierOptions {
  KernelSpec kernel{KernelFamily::gaussian, 1.0};
  HierScoring scoring = HierScoring::in_sample;
  HierCalibration calibration = HierCalibration::pooled;
  HierMode mode = HierMode::held_out;
  SolverConfig solver{2000, 0.5, 1e-3, false};
};

// Scores of every observed point in branch-major order (K*N - 1 entries), held-out mode.
std::vector<double> hierarchical_calibration_scores(const HierData& data, BranchScoreKind kind,
                                                    Level level, const HierOptions& opts = {});

double hierarchical_test_score(const HierData& data, BranchScoreKind kind, Level level, double y,
                               const HierOptions& opts = {});

PredictionRegion hierarchical_region(const HierData& data, BranchScoreKind kind, Level level,
                                     std::span<const double> y_grid, const HierOptions& opts = {});

}  // namespace ckit
