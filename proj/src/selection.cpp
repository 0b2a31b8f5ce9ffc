#include "conformal_kit/selection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "conformal_kit/errors.hpp"

namespace ckit {

std::string to_string(SelectionRule r) {
  switch (r) {
    case SelectionRule::avg_loss: return "AvgLoss";
    case SelectionRule::avg_rank_loss: return "AvgRankLoss";
    case SelectionRule::eff_size: return "EffSize";
    case SelectionRule::rand: return "Rand";
  }
  return "unknown";
}

SelectionRule selection_rule_from_string(const std::string& name) {
  for (auto r : all_selection_rules()) {
    std::string lower = to_string(r);
    std::transform(lower.begin(), lower.end(), lower.begin(), ::tolower);
    std::string in = name;
    std::transform(in.begin(), in.end(), in.begin(), ::tolower);
    if (in == lower || in == to_string(r)) return r;
  }
  throw ConfigError("unknown selection rule '" + name + "'");
}

const std::vector<SelectionRule>& all_selection_rules() {
  static const std::vector<SelectionRule> rules = {SelectionRule::avg_loss, SelectionRule::avg_rank_loss,
                                                   SelectionRule::eff_size, SelectionRule::rand};
  return rules;
}

double zeta_residual(double score, double threshold, Level alpha) {
  return (score <= threshold ? 1.0 : 0.0) - alpha.coverage();
}

namespace {

struct RowMass {
  double a = 0.0;  // weight on zeta = alpha
  double b = 0.0;  // weight on zeta = alpha - 1
};

double g_of(const RowMass& m, double lambda, double c, double al) {
  return m.a * al / (c + lambda * al) + m.b * (al - 1.0) / (c + lambda * (al - 1.0));
}

// Bisection runs on the distance to the nearer boundary so g keeps full relative precision
// when the root sits close to it: u = c + l(alpha-1) when m.b <= m.a, else w = c + l alpha.
ElRow solve_row(const RowMass& m, double c, Level level) {
  const double al = level.alpha();
  const double lower = -c / al;
  const double upper = c / (1.0 - al);
  ElRow row;
  if (m.a <= 0.0 || m.b <= 0.0) {
    row.degenerate = true;
    row.lambda = (1.0 - 1e-6) * (m.b <= 0.0 ? upper : lower);
    row.residual = g_of(m, row.lambda, c, al);
    row.contribution = m.a * std::log1p(row.lambda * al / c) +
                       m.b * std::log1p(row.lambda * (al - 1.0) / c);
    return row;
  }
  const bool near_upper = m.b <= m.a;
  // g as a function of the boundary distance; increasing in u, decreasing in w.
  auto g_u = [&](double u) { return m.a * al * (1.0 - al) / (c - al * u) - m.b * (1.0 - al) / u; };
  auto g_w = [&](double w) { return m.a * al / w - m.b * al * (1.0 - al) / (c - (1.0 - al) * w); };
  double lo = 0.0;
  double hi = near_upper ? c / al : c / (1.0 - al);
  double t = 0.5 * (lo + hi);
  double g = 0.0;
  for (int it = 0; it < 2000; ++it) {
    t = 0.5 * (lo + hi);
    g = near_upper ? g_u(t) : g_w(t);
    if (std::abs(g) <= 1e-14 || !(lo < t && t < hi)) break;
    const bool move_lo = near_upper ? g < 0.0 : g > 0.0;
    if (move_lo) {
      lo = t;
    } else {
      hi = t;
    }
  }
  double u = 0.0;
  double w = 0.0;
  if (near_upper) {
    u = t;
    row.lambda = (c - u) / (1.0 - al);
    w = (c - al * u) / (1.0 - al);
  } else {
    w = t;
    row.lambda = (w - c) / al;
    u = (c - (1.0 - al) * w) / al;
  }
  row.residual = g;
  row.contribution = m.a * std::log(w / c) + m.b * std::log(u / c);
  return row;
}

}  // namespace

ElRow el_row(std::span<const double> a, std::span<const double> zeta, double c, Level alpha) {
  if (a.size() != zeta.size()) throw DimensionError("weights and residuals differ in length");
  RowMass m;
  for (std::size_t j = 0; j < a.size(); ++j) {
    if (zeta[j] > 0.0) {
      m.a += a[j];
    } else {
      m.b += a[j];
    }
  }
  return solve_row(m, c, alpha);
}

namespace {

// Row-normalized kernel weights over the rows of x.
Matrix local_weights(const Matrix& x, const KernelSpec& kernel) {
  const Eigen::Index n = x.rows();
  Matrix a(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    a(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double k = kernel_eval(kernel, row_span(x, i), row_span(x, j));
      a(i, j) = k;
      a(j, i) = k;
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) a.row(i) /= a.row(i).sum();
  return a;
}

ElLoss loss_from_weights(const Matrix& a, std::span<const double> zeta, double c, Level alpha) {
  ElLoss out;
  out.rows.reserve(static_cast<std::size_t>(a.rows()));
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    RowMass m;
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      if (zeta[static_cast<std::size_t>(j)] > 0.0) {
        m.a += a(i, j);
      } else {
        m.b += a(i, j);
      }
    }
    ElRow row = solve_row(m, c, alpha);
    out.total += row.contribution;
    if (row.degenerate) ++out.degenerate_rows;
    out.rows.push_back(row);
  }
  return out;
}

}  // namespace

ElLoss localized_el_loss(const Matrix& x, std::span<const double> zeta, const KernelSpec& kernel,
                         Level alpha, std::optional<double> c) {
  if (x.rows() == 0) throw DomainError("empty data for the selection loss");
  if (static_cast<std::size_t>(x.rows()) != zeta.size()) {
    throw DimensionError("covariates and residuals differ in length");
  }
  return loss_from_weights(local_weights(x, kernel), zeta,
                           c.value_or(static_cast<double>(x.rows()) + 1.0), alpha);
}

std::vector<double> calibration_zeta(const CalibratedPredictor& candidate) {
  const auto& scores = candidate.calibration_scores();
  WeightedScoreSample sample{scores, std::vector<double>(scores.size(), 1.0), 1.0};
  const double q = weighted_quantile(sample, candidate.level());
  std::vector<double> zeta(scores.size());
  for (std::size_t j = 0; j < scores.size(); ++j) {
    zeta[j] = zeta_residual(scores[j], q, candidate.level());
  }
  return zeta;
}

ElLoss localized_el_loss(const CalibratedPredictor& candidate, const KernelSpec& kernel) {
  const auto zeta = calibration_zeta(candidate);
  return localized_el_loss(candidate.calibration().x, zeta, kernel, candidate.level());
}

CandidatePool::CandidatePool(std::vector<PredictorSpec> candidates, Dataset calib, Level level)
    : specs_(std::move(candidates)), calib_(std::move(calib)), level_(level) {
  if (specs_.empty()) throw ConfigError("candidate pool is empty");
  predictors_.reserve(specs_.size());
  for (const auto& s : specs_) predictors_.emplace_back(s, calib_, level_);
}

std::vector<std::string> CandidatePool::labels() const {
  std::vector<std::string> out;
  for (std::size_t k = 0; k < specs_.size(); ++k) {
    out.push_back(specs_[k].name.empty() ? "candidate" + std::to_string(k) : specs_[k].name);
  }
  return out;
}

std::vector<double> midranks(std::span<const double> values) {
  const auto order = sort_order(values);
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

namespace {

std::size_t argmin(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < v.size(); ++k) {
    if (v[k] < v[best]) best = k;
  }
  return best;
}

struct RuleStats {
  std::vector<std::vector<double>> ranks;
  std::vector<double> mean_loss;
  std::vector<double> mean_rank;
};

RuleStats rule_stats(const std::vector<std::vector<double>>& losses) {
  const std::size_t kc = losses.size();
  const std::size_t nb = kc ? losses[0].size() : 0;
  RuleStats st;
  st.ranks.assign(kc, std::vector<double>(nb, 0.0));
  st.mean_loss.assign(kc, 0.0);
  st.mean_rank.assign(kc, 0.0);
  for (std::size_t b = 0; b < nb; ++b) {
    std::vector<double> col(kc);
    for (std::size_t k = 0; k < kc; ++k) col[k] = losses[k][b];
    const auto r = midranks(col);
    for (std::size_t k = 0; k < kc; ++k) st.ranks[k][b] = r[k];
  }
  for (std::size_t k = 0; k < kc; ++k) {
    for (std::size_t b = 0; b < nb; ++b) {
      st.mean_loss[k] += losses[k][b] / static_cast<double>(nb);
      st.mean_rank[k] += st.ranks[k][b] / static_cast<double>(nb);
    }
  }
  return st;
}

std::vector<double> resolve_bandwidths(const CandidatePool& pool, const SelectionOptions& opts) {
  if (opts.bandwidths) return *opts.bandwidths;
  const Matrix& cov = opts.bandwidth_covariates ? *opts.bandwidth_covariates : pool.calibration().x;
  const double ref = opts.reference_n.value_or(static_cast<double>(pool.calibration().size()));
  const PairwiseDistances dist(cov);
  std::vector<double> out;
  for (double t : opts.targets) out.push_back(bandwidth_for_target_neff(t, dist, opts.family, ref));
  return out;
}

}  // namespace

SelectionReport select(const CandidatePool& pool, SelectionRule rule, Rng& rng,
                       const SelectionOptions& opts) {
  SelectionReport rep;
  rep.labels = pool.labels();
  rep.targets = opts.targets;
  rep.rule = rule;
  rep.bandwidths = resolve_bandwidths(pool, opts);
  const std::size_t kc = pool.size();
  const std::size_t nb = rep.bandwidths.size();
  if (nb == 0) throw ConfigError("selection needs at least one bandwidth");
  rep.losses.assign(kc, std::vector<double>(nb, 0.0));
  rep.degenerate_rows.assign(kc, std::vector<std::size_t>(nb, 0));

  std::vector<std::vector<double>> zetas;
  for (std::size_t k = 0; k < kc; ++k) zetas.push_back(calibration_zeta(pool.predictor(k)));
  const double c = static_cast<double>(pool.calibration().size()) + 1.0;
  const std::size_t n = pool.calibration().size();
  bool any_regular = false;
  for (std::size_t b = 0; b < nb; ++b) {
    const Matrix a = local_weights(pool.calibration().x, KernelSpec(opts.family, rep.bandwidths[b]));
    for (std::size_t k = 0; k < kc; ++k) {
      const ElLoss loss = loss_from_weights(a, zetas[k], c, pool.level());
      rep.losses[k][b] = loss.total;
      rep.degenerate_rows[k][b] = loss.degenerate_rows;
      if (loss.degenerate_rows < n) any_regular = true;
    }
  }
  if (!any_regular) throw SelectionError("selection losses are degenerate for every candidate");

  const RuleStats st = rule_stats(rep.losses);
  rep.ranks = st.ranks;
  rep.mean_loss = st.mean_loss;
  rep.mean_rank = st.mean_rank;

  rep.mean_length.assign(kc, kInf);
  if (opts.compute_lengths) {
    Rng len_rng = rng.child(0x1e9);
    for (std::size_t k = 0; k < kc; ++k) {
      const auto& p = pool.predictor(k);
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        RegionOptions ro;
        ro.auxiliary = p.draw_auxiliary(pool.calibration().row(i), len_rng);
        total += p.region(pool.calibration().row(i), ro).length();
      }
      rep.mean_length[k] = total / static_cast<double>(n);
    }
  }

  rep.chosen_by_rule["AvgLoss"] = argmin(rep.mean_loss);
  rep.chosen_by_rule["AvgRankLoss"] = argmin(rep.mean_rank);
  rep.chosen_by_rule["EffSize"] = argmin(rep.mean_length);
  rep.chosen_by_rule["Rand"] = rng.below(kc);
  rep.chosen = rep.chosen_by_rule.at(to_string(rule));
  return rep;
}

PredictionRegion efficient_selected_region(const CandidatePool& pool, std::span<const double> x_test,
                                           Level level, SelectionRule rule, Rng& rng,
                                           const SelectionOptions& opts,
                                           const RegionOptions& region) {
  if (level.alpha() != pool.level().alpha()) {
    const CandidatePool relevel(pool.specs(), pool.calibration(), level);
    return efficient_selected_region(relevel, x_test, level, rule, rng, opts, region);
  }
  if (pool.size() == 1) return pool.predictor(0).region(x_test, region);
  const SelectionReport rep = select(pool, rule, rng, opts);
  return pool.predictor(rep.chosen).region(x_test, region);
}

PredictionRegion exact_selected_region(const CandidatePool& pool, std::span<const double> x_test,
                                       SelectionRule rule, const SelectionReport& efficient,
                                       const RegionOptions& region) {
  if (rule != SelectionRule::avg_loss && rule != SelectionRule::avg_rank_loss) {
    return pool.predictor(efficient.chosen_by_rule.at(to_string(rule))).region(x_test, region);
  }
  const Dataset& cal = pool.calibration();
  const std::size_t n = cal.size();
  const std::size_t kc = pool.size();
  const std::size_t nb = efficient.bandwidths.size();
  const Level level = pool.level();
  const double c = static_cast<double>(n) + 1.0;

  Matrix xa(static_cast<Eigen::Index>(n + 1), cal.x.cols());
  xa.topRows(static_cast<Eigen::Index>(n)) = cal.x;
  for (std::size_t k = 0; k < x_test.size(); ++k) {
    xa(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k)) = x_test[k];
  }

  std::vector<std::vector<double>> zetas;
  std::vector<double> q_uniform(kc);
  for (std::size_t k = 0; k < kc; ++k) {
    zetas.push_back(calibration_zeta(pool.predictor(k)));
    const auto& s = pool.predictor(k).calibration_scores();
    q_uniform[k] = weighted_quantile({s, std::vector<double>(n, 1.0), 1.0}, level);
  }
  // loss[state][k][b]: state 1 when the test pair is covered by candidate k.
  std::vector<std::vector<std::vector<double>>> loss(
      2, std::vector<std::vector<double>>(kc, std::vector<double>(nb, 0.0)));
  for (std::size_t b = 0; b < nb; ++b) {
    const Matrix a = local_weights(xa, KernelSpec(KernelFamily::gaussian, efficient.bandwidths[b]));
    for (std::size_t k = 0; k < kc; ++k) {
      for (Eigen::Index i = 0; i <= static_cast<Eigen::Index>(n); ++i) {
        RowMass m;
        for (std::size_t j = 0; j < n; ++j) {
          if (zetas[k][j] > 0.0) {
            m.a += a(i, static_cast<Eigen::Index>(j));
          } else {
            m.b += a(i, static_cast<Eigen::Index>(j));
          }
        }
        const double at = a(i, static_cast<Eigen::Index>(n));
        loss[1][k][b] += solve_row({m.a + at, m.b}, c, level).contribution;
        loss[0][k][b] += solve_row({m.a, m.b + at}, c, level).contribution;
      }
    }
  }

  const Interval domain = region.y_domain.value_or(default_y_domain(cal.y));
  const std::vector<double> grid = make_grid(domain, region.resolution);
  std::vector<double> thresholds(kc);
  for (std::size_t k = 0; k < kc; ++k) thresholds[k] = pool.predictor(k).threshold(x_test, region);
  std::vector<bool> mask(grid.size(), false);
  std::vector<std::vector<double>> cur(kc, std::vector<double>(nb));
  for (std::size_t g = 0; g < grid.size(); ++g) {
    std::vector<double> s(kc);
    for (std::size_t k = 0; k < kc; ++k) {
      s[k] = pool.predictor(k).test_score(x_test, grid[g]);
      cur[k] = loss[s[k] <= q_uniform[k] ? 1 : 0][k];
    }
    const RuleStats st = rule_stats(cur);
    const std::size_t chosen =
        argmin(rule == SelectionRule::avg_loss ? st.mean_loss : st.mean_rank);
    mask[g] = s[chosen] <= thresholds[chosen];
  }
  return PredictionRegion::from_grid_mask(grid, mask);
}

}  // namespace ckit
