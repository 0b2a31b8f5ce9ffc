#include <doctest.h>

#include <cmath>

#include "conformal_kit/errors.hpp"
#include "conformal_kit/experiment.hpp"
#include "conformal_kit/selection.hpp"
#include "support.hpp"

using namespace ckit;

namespace {

double g_direct(std::span<const double> a, std::span<const double> z, double c, double lambda) {
  double g = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) g += a[j] * z[j] / (c + lambda * z[j]);
  return g;
}

}  // namespace

TEST_SUITE("selection") {

TEST_CASE("zeta residuals") {
  CHECK(zeta_residual(0.5, 1.0, Level(0.1)) == doctest::Approx(0.1));
  CHECK(zeta_residual(1.5, 1.0, Level(0.1)) == doctest::Approx(-0.9));
}

TEST_CASE("two-point empirical-likelihood root") {
  const double al = 0.1;
  const std::vector<double> a{0.5, 0.5};
  const std::vector<double> z{al, al - 1.0};
  const double c = 3.0;
  const ElRow row = el_row(a, z, c, Level(al));
  // 0.1 (c - 0.9 l) = 0.9 (c + 0.1 l)  =>  l = -0.8 c / 0.18
  CHECK(row.lambda == doctest::Approx(-0.8 * c / 0.18).epsilon(1e-8));
  CHECK(std::fabs(g_direct(a, z, c, row.lambda)) <= 1e-10);
  CHECK_FALSE(row.degenerate);
}

TEST_CASE("balanced row has a zero root") {
  const double al = 0.25;
  const std::vector<double> a{0.75, 0.25};
  const std::vector<double> z{al, al - 1.0};
  const ElRow row = el_row(a, z, 5.0, Level(al));
  CHECK(std::fabs(row.lambda) < 1e-9);
  CHECK(std::fabs(row.contribution) < 1e-9);
}

TEST_CASE("property: roots solve their row equation and contributions are nonnegative") {
  Rng rng(1);
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = 2 + rng.below(30);
    const double al = 0.05 + 0.9 * rng.uniform();
    std::vector<double> a(n), z(n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      a[j] = rng.uniform();
      s += a[j];
      z[j] = rng.bernoulli(0.5) ? al : al - 1.0;
    }
    for (auto& v : a) v /= s;
    const double c = static_cast<double>(n) + 1.0;
    const ElRow row = el_row(a, z, c, Level(al));
    CHECK(row.contribution >= -1e-9);
    if (!row.degenerate) {
      CHECK(std::fabs(row.residual) <= 1e-10);
      CHECK(row.lambda > -c / al);
      CHECK(row.lambda < c / (1.0 - al));
      // g is strictly decreasing in lambda.
      for (int k = 0; k < 20; ++k) {
        const double l = -c / al + (k + 0.5) / 20.0 * (c / (1.0 - al) + c / al);
        double deriv = 0.0;
        for (std::size_t j = 0; j < n; ++j) deriv -= a[j] * z[j] * z[j] / std::pow(c + l * z[j], 2);
        CHECK(deriv < 0.0);
      }
    }
  }
}

TEST_CASE("well-calibrated residuals have a smaller loss than biased ones") {
  Rng rng(2);
  const std::size_t n = 200;
  const Matrix x = testing::gen_matrix(rng, n, 1);
  const Level lv(0.1);
  std::vector<double> good(n), biased(n);
  for (std::size_t j = 0; j < n; ++j) {
    good[j] = zeta_residual(rng.uniform(), 0.9, lv);
    const double p = x(static_cast<Eigen::Index>(j), 0) > 0 ? 0.99 : 0.8;
    biased[j] = zeta_residual(rng.uniform(), p, lv);
  }
  const KernelSpec k(KernelFamily::gaussian, 0.3);
  CHECK(localized_el_loss(x, good, k, lv).total < localized_el_loss(x, biased, k, lv).total);
}

TEST_CASE("midranks") {
  const std::vector<double> v{3.0, 1.0, 3.0, 2.0};
  const auto r = midranks(v);
  CHECK(r == std::vector<double>{3.5, 1.0, 3.5, 2.0});
}

TEST_CASE("rigged pool selection and determinism") {
  SelectionExperimentConfig cfg;
  cfg.dgp.seed = 5;
  cfg.reps = 1;
  Rng data_rng = Rng(5).child(0).child(0);
  const DgpDraw draw = generate_dgp(cfg.dgp, data_rng);
  const CandidatePool pool(rigged_selection_pool(cfg, draw.train), draw.calib, Level(0.1));
  SelectionOptions opts;
  opts.bandwidth_covariates = draw.train.x;
  opts.reference_n = 500;
  Rng r1(3), r2(3);
  const auto a = select(pool, SelectionRule::rand, r1, opts);
  const auto b = select(pool, SelectionRule::rand, r2, opts);
  CHECK(a.chosen == b.chosen);
  CHECK(a.mean_loss == b.mean_loss);
  CHECK(a.chosen_by_rule.at("AvgLoss") == 0);

  SUBCASE("identical candidates tie to index 0") {
    std::vector<PredictorSpec> same(3, pool.specs()[1]);
    const CandidatePool tied(same, draw.calib, Level(0.1));
    Rng r(4);
    const auto rep = select(tied, SelectionRule::avg_loss, r, opts);
    CHECK(rep.chosen_by_rule.at("AvgLoss") == 0);
    CHECK(rep.chosen_by_rule.at("AvgRankLoss") == 0);
    CHECK(rep.chosen_by_rule.at("EffSize") == 0);
  }

  SUBCASE("loss is invariant to permuting the calibration set") {
    Rng prng(6);
    const Dataset perm = testing::permute(draw.calib, testing::gen_permutation(prng, draw.calib.size()));
    const CandidatePool p2(pool.specs(), perm, Level(0.1));
    SelectionOptions fixed = opts;
    fixed.bandwidths = a.bandwidths;
    Rng r(7);
    const auto rep = select(p2, SelectionRule::avg_loss, r, fixed);
    for (std::size_t k = 0; k < rep.losses.size(); ++k) {
      for (std::size_t bb = 0; bb < rep.losses[k].size(); ++bb) {
        CHECK(std::fabs(rep.losses[k][bb] - a.losses[k][bb]) <= 1e-12 * std::max(1.0, std::fabs(a.losses[k][bb])));
      }
    }
  }

  SUBCASE("pool of one matches the plain region") {
    const CandidatePool one({pool.specs()[0]}, draw.calib, Level(0.1));
    Rng r(8);
    const auto x = row_span(draw.test_x, 0);
    const PredictionRegion sel = efficient_selected_region(one, x, Level(0.1), SelectionRule::avg_loss, r, opts);
    const PredictionRegion plain = build_prediction_region(pool.specs()[0], draw.calib, x, Level(0.1));
    REQUIRE(sel.intervals().size() == plain.intervals().size());
    for (std::size_t k = 0; k < sel.intervals().size(); ++k) {
      CHECK(sel.intervals()[k].lo == plain.intervals()[k].lo);
      CHECK(sel.intervals()[k].hi == plain.intervals()[k].hi);
    }
  }

  SUBCASE("exact re-selection agrees with the efficient region on most of the grid") {
    Rng r(9);
    const auto x = row_span(draw.test_x, 1);
    const auto rep = select(pool, SelectionRule::avg_loss, r, opts);
    RegionOptions ro;
    ro.resolution = 64;
    ro.y_domain = default_y_domain(draw.calib.y);
    const PredictionRegion exact = exact_selected_region(pool, x, SelectionRule::avg_loss, rep, ro);
    Rng r2b(9);
    const PredictionRegion eff =
        efficient_selected_region(pool, x, Level(0.1), SelectionRule::avg_loss, r2b, opts, ro);
    const auto grid = make_grid(*ro.y_domain, ro.resolution);
    std::size_t agree = 0;
    for (double y : grid) agree += exact.contains(y) == eff.contains(y);
    CHECK(static_cast<double>(agree) >= 0.95 * grid.size());
  }
}

TEST_CASE("rule names round-trip") {
  for (auto r : all_selection_rules()) CHECK(selection_rule_from_string(to_string(r)) == r);
  CHECK_THROWS_AS(selection_rule_from_string("best"), ConfigError);
}

}  // TEST_SUITE
