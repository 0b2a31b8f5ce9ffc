// One PASS/FAIL line per acceptance criterion; exit status is nonzero if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "../unit/support.hpp"
#include "conformal_kit/core.hpp"
#include "conformal_kit/dgp.hpp"
#include "conformal_kit/estimators.hpp"
#include "conformal_kit/experiment.hpp"
#include "conformal_kit/methods.hpp"
#include "conformal_kit/selection.hpp"

using namespace ckit;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [x]");
    pass = pass && ok;
  }
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

void note(const std::string& s) { std::printf("  note: %s\n", s.c_str()); }

double binomial_se(double p, std::size_t reps) {
  return std::sqrt(p * (1.0 - p) / static_cast<double>(reps));
}

ExperimentConfig dgp1_table(double sigma, std::vector<std::string> methods) {
  ExperimentConfig c;
  c.dgp.dgp = 1;
  c.dgp.d = 10;
  c.dgp.n = 500;
  c.dgp.n_tr = 1000;
  c.dgp.n_te = 500;
  c.dgp.sigma_x = sigma;
  c.dgp.seed = 2024;
  c.dgp.dgp1_noise = Dgp1Noise::abs_sum;
  c.alpha = 0.1;
  c.reps = 50;
  c.methods = std::move(methods);
  c.lcp_self = LcpSelf::exclude;
  return c;
}

Outcome table_subset() {
  Outcome o;
  const MetricsTable t10 = run_coverage_experiment(dgp1_table(1.0, {"wcp"}));
  const auto& w = t10.method("wcp");
  o.require(std::fabs(w.marginal - 0.907) <= 0.02, fmt("WCP s=1.0 marginal %.3f (0.907+-0.02)", w.marginal));
  o.require(std::fabs(w.cond_miscov - 0.104) <= 0.02,
            fmt("WCP s=1.0 cond %.3f (0.104+-0.02)", w.cond_miscov));

  const MetricsTable t12 = run_coverage_experiment(dgp1_table(1.2, {"cqr", "cqr_shift"}));
  const auto& u = t12.method("cqr");
  const auto& s = t12.method("cqr_shift");
  o.require(std::fabs(u.marginal - 0.824) <= 0.03, fmt("CQR s=1.2 marginal %.3f (0.824+-0.03)", u.marginal));
  o.require(std::fabs(s.marginal - 0.904) <= 0.02,
            fmt("weighted CQR s=1.2 marginal %.3f (0.904+-0.02)", s.marginal));

  ExperimentConfig c3 = dgp1_table(1.0, {"lcp"});
  c3.dgp.dgp = 3;
  const MetricsTable t3 = run_coverage_experiment(c3);
  const auto& l = t3.method("lcp");
  o.require(std::fabs(l.cond_miscov - 0.032) <= 0.015,
            fmt("DGP3 LCP cond %.3f (0.032+-0.015)", l.cond_miscov));
  o.require(std::fabs(l.marginal - 0.902) <= 0.02, fmt("DGP3 LCP marginal %.3f (0.902+-0.02)", l.marginal));

  ExperimentConfig lit = dgp1_table(1.0, {"wcp"});
  lit.dgp.dgp1_noise = Dgp1Noise::sum_abs;
  const auto& wl = run_coverage_experiment(lit).method("wcp");
  note(fmt("DGP1 with summed absolute deviations: WCP s=1.0 marginal %.3f cond %.3f", wl.marginal,
           wl.cond_miscov));
  c3.lcp_self = LcpSelf::include;
  const auto& li = run_coverage_experiment(c3).method("lcp");
  note(fmt("DGP3 LCP with the test point in its own weight: marginal %.3f cond %.3f", li.marginal,
           li.cond_miscov));
  return o;
}

Outcome marginal_validity() {
  Outcome o;
  ExperimentConfig c;
  c.dgp.dgp = 3;
  c.dgp.d = 1;
  c.dgp.n = 200;
  c.dgp.n_tr = 400;
  c.dgp.n_te = 20;
  c.dgp.sigma_x = 1.0;
  c.dgp.seed = 77;
  c.reps = 1000;
  c.methods = {"scp", "cqr", "dcp", "lcp", "rlcp", "cc", "batchgcp"};
  c.bandwidth.target_neff = 30.0;
  c.resample_test = true;
  const MetricsTable t = run_coverage_experiment(c);
  const double se = binomial_se(0.9, c.reps);
  const double lo = 0.9 - 3.0 * se;
  const double hi = 0.9 + 1.0 / 201.0 + 3.0 * se;
  for (const auto& m : c.methods) {
    const double v = t.method(m).marginal;
    o.require(v >= lo && v <= hi, m + fmt(" %.4f in [%.4f, %.4f]", v, lo, hi));
  }

  const MetricsTable s = run_coverage_experiment(dgp1_table(1.2, {"scp", "cqr"}));
  for (const auto& m : {"scp", "cqr"}) {
    const double v = s.method(m).marginal;
    o.require(v < 0.88, std::string(m) + fmt(" under shift %.3f < 0.88", v));
  }
  return o;
}

Outcome quantile_oracle() {
  Outcome o;
  Rng rng(31);
  std::size_t bad = 0;
  for (int t = 0; t < 500; ++t) {
    const auto s = testing::gen_weighted_sample(rng);
    const double a = testing::gen_alpha(rng);
    bad += weighted_quantile(s, Level(a)) != testing::brute_force_quantile(s, a);
  }
  o.require(bad == 0, fmt("%.0f of 500 instances differ", static_cast<double>(bad)));
  return o;
}

Outcome pvalue_duality() {
  Outcome o;
  std::size_t bad = 0;
  std::size_t checked = 0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    DgpSpec spec;
    spec.dgp = 3;
    spec.d = 1;
    spec.n = 100;
    spec.n_tr = 200;
    spec.n_te = 2;
    spec.sigma_x = 1.2;
    Rng rng(seed);
    const DgpDraw draw = generate_dgp(spec, rng);
    ExperimentConfig c;
    c.dgp = spec;
    c.methods = method_names();
    c.bandwidth.target_neff = 25.0;
    const RepetitionFit fit = fit_repetition(c, draw.train);
    const auto grid = make_grid(default_y_domain(draw.calib.y), 128);
    for (const auto& m : method_names()) {
      const CalibratedPredictor cp(
          make_predictor(m, fit.components, fit.kernel,
                         is_shift_method(m) ? density_ratio(spec) : CovariateFn{}),
          draw.calib, Level(0.1));
      for (Eigen::Index i = 0; i < 2; ++i) {
        const auto x = row_span(draw.test_x, i);
        RegionOptions opts;
        opts.auxiliary = cp.draw_auxiliary(x, rng);
        const PredictionRegion r = cp.region(x, opts);
        for (double y : grid) {
          bad += (cp.p_value(x, y, opts) > 0.1) != r.contains(y);
          ++checked;
        }
      }
    }
  }
  o.require(bad == 0, fmt("duality: %.0f mismatches in %.0f grid checks", static_cast<double>(bad),
                          static_cast<double>(checked)));

  ExperimentConfig c;
  c.dgp.dgp = 3;
  c.dgp.d = 1;
  c.dgp.n = 200;
  c.dgp.n_tr = 400;
  c.dgp.sigma_x = 1.0;
  c.dgp.seed = 5;
  c.reps = 2000;
  c.methods = method_names();
  c.bandwidth.target_neff = 30.0;
  const PValueTable t = run_pvalue_experiment(c);
  const double bound = 0.1 + 3.0 * binomial_se(0.1, c.reps);
  double worst = 0.0;
  std::string worst_name;
  for (std::size_t m = 0; m < t.methods.size(); ++m) {
    if (t.rejection[m] > worst) {
      worst = t.rejection[m];
      worst_name = t.methods[m];
    }
    if (t.rejection[m] > bound) o.require(false, t.methods[m] + fmt(" Pr(p<=a) %.4f", t.rejection[m]));
  }
  o.require(worst <= bound, "max Pr(p<=a) " + worst_name + fmt(" %.4f <= %.4f", worst, bound));
  return o;
}

Outcome graph_suite() {
  Outcome o;
  GraphExperimentConfig c;
  c.sbm.seed = 9;
  c.reps = 200;
  const GraphMetrics g = run_graph_experiment(c);
  double std_worst = 0.0;
  for (std::size_t k = 0; k < g.graphcp_coverage.size(); ++k) {
    const double dev = std::fabs((1.0 - g.graphcp_coverage[k]) - 0.1);
    o.require(dev <= 0.03, fmt("block %.0f GraphCP miscov %.3f", static_cast<double>(k),
                               1.0 - g.graphcp_coverage[k]));
    std_worst = std::max(std_worst, std::fabs((1.0 - g.stdcp_coverage[k]) - 0.1));
  }
  o.require(std_worst > 0.05, fmt("StdCP worst deviation %.3f > 0.05", std_worst));
  o.require(g.rank_grid_exact, "rank grid exact");
  o.require(g.max_scaled_threshold_gap <= 2.0,
            fmt("max m_min*|q-(1-a)| %.3f <= 2", g.max_scaled_threshold_gap));
  return o;
}

Outcome selection_suite() {
  Outcome o;
  SelectionExperimentConfig c;
  c.dgp.seed = 13;
  c.reps = 50;
  const SelectionMetrics m = run_selection_experiment(c);
  const auto& rules = all_selection_rules();
  double avg = 0.0, eff = 0.0;
  for (std::size_t r = 0; r < rules.size(); ++r) {
    const double rate = m.good_rate[r];
    switch (rules[r]) {
      case SelectionRule::avg_loss:
        avg = rate;
        o.require(rate >= 0.8, fmt("AvgLoss %.2f >= 0.80", rate));
        break;
      case SelectionRule::avg_rank_loss:
        o.require(rate >= 0.8, fmt("AvgRankLoss %.2f >= 0.80", rate));
        break;
      case SelectionRule::eff_size:
        eff = rate;
        break;
      case SelectionRule::rand:
        o.require(std::fabs(rate - 0.25) <= 0.18, fmt("Rand %.2f near 0.25", rate));
        break;
    }
  }
  o.require(eff < avg, fmt("EffSize %.2f < AvgLoss %.2f", eff, avg));

  double worst = 0.0, perm = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(100 + seed);
    const DgpDraw draw = generate_dgp(c.dgp, rng);
    const CandidatePool pool(rigged_selection_pool(c, draw.train), draw.calib, Level(c.alpha));
    const Dataset shuffled =
        testing::permute(draw.calib, testing::gen_permutation(rng, draw.calib.size()));
    const CandidatePool pool2(pool.specs(), shuffled, Level(c.alpha));
    for (double target : c.targets) {
      const KernelSpec k(KernelFamily::gaussian,
                         bandwidth_for_target_neff(target, draw.train.x, KernelFamily::gaussian,
                                                   static_cast<double>(c.dgp.n)));
      for (std::size_t j = 0; j < pool.size(); ++j) {
        const ElLoss loss = localized_el_loss(pool.predictor(j), k);
        for (const auto& row : loss.rows)
          if (!row.degenerate) worst = std::max(worst, std::fabs(row.residual));
        const ElLoss loss2 = localized_el_loss(pool2.predictor(j), k);
        perm = std::max(perm, std::fabs(loss.total - loss2.total) / std::max(1.0, std::fabs(loss.total)));
      }
    }
  }
  o.require(worst <= 1e-10, fmt("max root residual %.2e", worst));
  o.require(perm <= 1e-12, fmt("permutation change %.2e", perm));
  return o;
}

Outcome hier_suite() {
  Outcome o;
  HierExperimentConfig c;
  c.hier.branches = 50;
  c.hier.per_branch = 20;
  c.hier.seed = 17;
  c.reps = 300;
  c.options.mode = HierMode::trial_inclusive;
  c.x_cuts.clear();
  const HierMetrics h = run_hier_experiment(c);
  for (std::size_t b = 0; b < h.bin_coverage.size(); ++b) {
    o.require(std::fabs(h.bin_coverage[b] - 0.9) <= 0.05,
              fmt("tau bin %.0f coverage %.3f", static_cast<double>(b), h.bin_coverage[b]));
  }
  const double se = binomial_se(0.9, c.reps);
  const double lo = 0.9 - 3.0 * se;
  const double hi = 0.9 + 1.0 / 1000.0 + 3.0 * se;
  o.require(h.marginal >= lo && h.marginal <= hi, fmt("marginal %.4f in [%.4f, %.4f]", h.marginal, lo, hi));

  HierExperimentConfig held = c;
  held.options.mode = HierMode::held_out;
  held.reps = 100;
  const HierMetrics hh = run_hier_experiment(held);
  note(fmt("hierarchical held-out test branch (100 reps): marginal %.3f", hh.marginal));
  return o;
}

Outcome estimator_checks() {
  Outcome o;
  Rng rng(41);
  const Matrix x = testing::gen_matrix(rng, 5000, 1);
  std::vector<double> t(5000);
  for (auto& v : t) v = rng.normal();
  SolverConfig solver;
  solver.fail_on_stall = false;
  const auto m = fit_pinball_qr(x, t, BasisSpec::intercept_only(), Level(0.1), 0.0, std::nullopt, solver);
  o.require(std::fabs(m.kappa[0] - 1.2816) < 0.05, fmt("pinball intercept %.4f", m.kappa[0]));

  double worst_gap = 0.0;
  bool ok = true;
  for (int r = 0; r < 5; ++r) {
    const std::size_t n = 1000, d = 1 + static_cast<std::size_t>(r % 3);
    const Dataset data = testing::gen_linear_data(rng, n, d);
    SolverConfig s2 = solver;
    s2.max_iterations = 6000;
    const BasisSpec basis = BasisSpec::intercept_and_coordinates(d);
    const auto fit = fit_pinball_qr(data.x, data.y, basis, Level(0.1), 0.0, std::nullopt, s2);
    std::size_t below = 0;
    for (std::size_t i = 0; i < n; ++i) below += data.y[i] - predict_quantile(fit, data.row(i)) <= 0.0;
    const double gap = std::fabs(static_cast<double>(below) / n - 0.9);
    worst_gap = std::max(worst_gap, gap);
    ok = ok && gap <= static_cast<double>(basis.d0() + 1) / n + 0.01;
  }
  o.require(ok, fmt("residual-fraction worst gap %.4f", worst_gap));

  std::size_t bad = 0;
  for (int tcase = 0; tcase < 200; ++tcase) {
    const std::size_t n = 1 + rng.below(40), d = 1 + rng.below(3);
    const Matrix xs = testing::gen_matrix(rng, n, d);
    std::vector<double> v(n);
    for (auto& e : v) e = std::round(rng.normal() * 4.0) / 4.0;
    const ConditionalCdf cdf(KernelSpec(KernelFamily::gaussian, 0.05 + 3.0 * rng.uniform()), xs, v);
    const Matrix q = testing::gen_matrix(rng, 1, d, 2.0);
    const StepCdf step = cdf.at(row_span(q, 0));
    double prev = 0.0;
    for (double u = -6.0; u <= 6.0; u += 0.05) {
      const double f = step.eval(u);
      bad += f < prev - 1e-15 || f < 0.0 || f > 1.0 + 1e-12;
      prev = f;
    }
    bad += std::fabs(step.eval(*std::max_element(v.begin(), v.end())) - 1.0) > 1e-12;
  }
  o.require(bad == 0, fmt("CDF violations %.0f on 200 fuzzed fits", static_cast<double>(bad)));
  return o;
}

Outcome rate_trend() {
  Outcome o;
  std::vector<double> lcp, rlcp;
  for (std::size_t n : {250, 500, 1000, 2000}) {
    ExperimentConfig c;
    c.dgp.dgp = 1;
    c.dgp.d = 2;
    c.dgp.n = n;
    c.dgp.n_tr = 1000;
    c.dgp.n_te = 100;
    c.dgp.seed = 3;
    c.reps = 30;
    c.methods = {"lcp", "rlcp"};
    c.bandwidth.rule = BandwidthRule::rate;
    c.bandwidth.rate_constant = 1.0;
    const MetricsTable t = run_coverage_experiment(c);
    lcp.push_back(t.method("lcp").cond_miscov);
    rlcp.push_back(t.method("rlcp").cond_miscov);
  }
  const auto series = [](const std::vector<double>& v) {
    return fmt("%.4f %.4f", v[0], v[1]) + fmt(" %.4f %.4f", v[2], v[3]);
  };
  o.require(std::is_sorted(lcp.rbegin(), lcp.rend()), "LCP " + series(lcp));
  o.require(std::is_sorted(rlcp.rbegin(), rlcp.rend()), "RLCP " + series(rlcp));
  return o;
}

}  // namespace

int main() {
  const std::vector<std::function<Outcome()>> criteria = {
      table_subset, marginal_validity, quantile_oracle, pvalue_duality, graph_suite,
      selection_suite, hier_suite, estimator_checks, rate_trend};
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = criteria[k]();
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail = std::string("exception: ") + e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("criterion %zu %s: %s (%.0fs)\n", k + 1, out.pass ? "PASS" : "FAIL", out.detail.c_str(),
                secs);
    std::fflush(stdout);
    failed += !out.pass;
  }
  return failed == 0 ? 0 : 1;
}
