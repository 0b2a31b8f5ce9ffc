#include <doctest.h>

#include <cmath>

#include "conformal_kit/errors.hpp"
#include "conformal_kit/experiment.hpp"
#include "conformal_kit/hier.hpp"

using namespace ckit;

namespace {

HierData tiny_layout() {
  HierData d;
  d.branches = 2;
  d.per_branch = 3;
  d.x = Matrix::Zero(6, 1);
  d.y = {1.0, 2.0, 3.0, 1.0, 2.0, 0.0};
  return d;
}

}  // namespace

TEST_SUITE("hier") {

TEST_CASE("enumerated scores for two identical branches of three") {
  const HierData d = tiny_layout();
  const auto s = hierarchical_calibration_scores(d, BranchScoreKind::dcp_branch, Level(0.5));
  // Branch 0 in-sample ranks 1/3, 2/3, 1; test branch ranks 1/2, 1 over its two observed points.
  const std::vector<double> expect{1.0 / 6, 1.0 / 6, 0.5, 0.0, 0.5};
  REQUIRE(s.size() == expect.size());
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(s[i] == doctest::Approx(expect[i]));

  // Pooled quantile at alpha = 1/2 over six atoms is the third smallest, 1/6.
  const auto grid = make_grid({-0.25, 3.75}, 17);
  const PredictionRegion held = hierarchical_region(d, BranchScoreKind::dcp_branch, Level(0.5), grid);
  for (double y : grid) CHECK(held.contains(y) == (y >= 1.0 && y < 2.0));

  HierOptions trial;
  trial.mode = HierMode::trial_inclusive;
  const PredictionRegion inc =
      hierarchical_region(d, BranchScoreKind::dcp_branch, Level(0.5), grid, trial);
  for (double y : grid) {
    if (y == 1.0 || y == 2.0 || y == 3.0) continue;
    CHECK(inc.contains(y) == (y < 2.0));
  }
}

TEST_CASE("a single branch is rejected") {
  HierData d;
  d.branches = 1;
  d.per_branch = 5;
  d.x = Matrix::Zero(5, 1);
  d.y = std::vector<double>(5, 0.0);
  CHECK_THROWS_AS(hierarchical_calibration_scores(d, BranchScoreKind::dcp_branch, Level(0.1)),
                  DomainError);
  HierSpec spec;
  spec.branches = 1;
  CHECK_THROWS(spec.validate());
}

TEST_CASE("trial-inclusive mode is dcp only") {
  const HierData d = tiny_layout();
  HierOptions o;
  o.mode = HierMode::trial_inclusive;
  const auto grid = make_grid({0, 3}, 16);
  CHECK_THROWS_AS(hierarchical_region(d, BranchScoreKind::cqr_branch, Level(0.5), grid, o),
                  UnsupportedError);
}

TEST_CASE("cqr branches produce a region") {
  HierSpec spec;
  spec.branches = 6;
  spec.per_branch = 30;
  Rng rng(3);
  const HierDraw draw = generate_hierarchical(spec, rng);
  const auto grid = make_grid(default_y_domain(draw.data.y), 256);
  const PredictionRegion r =
      hierarchical_region(draw.data, BranchScoreKind::cqr_branch, Level(0.2), grid);
  CHECK_FALSE(r.is_empty());
}

TEST_CASE("pooling beats own-branch calibration with small branches") {
  HierExperimentConfig cfg;
  cfg.hier.branches = 200;
  cfg.hier.per_branch = 5;
  cfg.hier.seed = 11;
  cfg.reps = 40;
  cfg.test_points = 2;
  cfg.resolution = 512;
  cfg.options.mode = HierMode::trial_inclusive;
  cfg.x_cuts.clear();
  const auto branch_error = [](const HierMetrics& m) {
    double e = 0.0;
    for (double c : m.bin_coverage) e += std::fabs(c - 0.9);
    return e / static_cast<double>(m.bin_coverage.size());
  };
  const HierMetrics pooled = run_hier_experiment(cfg);
  cfg.options.calibration = HierCalibration::own_branch;
  const HierMetrics own = run_hier_experiment(cfg);
  CHECK(branch_error(pooled) < branch_error(own));
  CHECK(own.marginal == doctest::Approx(1.0));
}

TEST_CASE("experiment determinism") {
  HierExperimentConfig cfg;
  cfg.hier.branches = 10;
  cfg.reps = 6;
  cfg.resolution = 256;
  cfg.options.mode = HierMode::trial_inclusive;
  const HierMetrics a = run_hier_experiment(cfg);
  cfg.jobs = 3;
  const HierMetrics b = run_hier_experiment(cfg);
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].coverage == b.records[i].coverage);
    CHECK(a.records[i].length == b.records[i].length);
  }
}

}  // TEST_SUITE
