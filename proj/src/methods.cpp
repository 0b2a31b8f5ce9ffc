#include "conformal_kit/methods.hpp"

#include <algorithm>
#include <cmath>

#include "conformal_kit/errors.hpp"

namespace ckit {

double BaseScore::eval(std::span<const double> x, double y) const {
  if (kind == BaseKind::response) return y;
  return std::abs(y - mean->predict(x));
}

double BaseScore::center(std::span<const double> x) const {
  return kind == BaseKind::response ? 0.0 : mean->predict(x);
}

std::string to_string(ScoreKind k) {
  switch (k) {
    case ScoreKind::residual: return "residual";
    case ScoreKind::cqr_two_sided: return "cqr_two_sided";
    case ScoreKind::cqr_one_sided: return "cqr_one_sided";
    case ScoreKind::dcp: return "dcp";
    case ScoreKind::glcp_identity: return "glcp_identity";
    case ScoreKind::lcp_rank: return "lcp_rank";
    case ScoreKind::cc_centered: return "cc_centered";
    case ScoreKind::batchgcp: return "batchgcp";
    case ScoreKind::custom: return "custom";
  }
  return "unknown";
}

void ScoreSpec::validate() const {
  const bool uses_base = kind != ScoreKind::cqr_two_sided && kind != ScoreKind::custom &&
                         kind != ScoreKind::dcp;
  if (uses_base && base.kind == BaseKind::residual && !base.mean) {
    throw ConfigError(to_string(kind) + " score needs a mean model for the residual base score");
  }
  switch (kind) {
    case ScoreKind::residual:
      if (base.kind != BaseKind::residual) throw ConfigError("residual score needs a residual base");
      break;
    case ScoreKind::cqr_two_sided:
      if (!lower || !upper) throw ConfigError("two-sided CQR needs lower and upper quantile models");
      break;
    case ScoreKind::cqr_one_sided:
      if (!quantile) throw ConfigError("one-sided CQR needs a quantile model");
      break;
    case ScoreKind::dcp:
    case ScoreKind::glcp_identity:
      if (!cdf) throw ConfigError(to_string(kind) + " score needs a conditional CDF");
      break;
    case ScoreKind::lcp_rank:
      if (!kernel) throw ConfigError("LCP score needs a kernel");
      break;
    case ScoreKind::cc_centered:
      break;
    case ScoreKind::batchgcp:
      if (groups.empty() && !adjustment) throw ConfigError("BatchGCP needs at least one group");
      break;
    case ScoreKind::custom:
      if (!custom) throw ConfigError("custom score needs a score function");
      break;
  }
}

void WeightSpec::validate() const {
  if ((kind == WeightKind::density_ratio || kind == WeightKind::shift_local) && !ratio) {
    throw ConfigError("density-ratio weights need r_X");
  }
  if (randomized() && !kernel) throw ConfigError("randomized local weights need a kernel");
}

void PredictorSpec::validate() const {
  score.validate();
  weight.validate();
  if (mode == CalibrationMode::exact && score.kind != ScoreKind::lcp_rank &&
      score.kind != ScoreKind::cc_centered) {
    throw ConfigError("exact calibration mode is only available for lcp_rank and cc_centered");
  }
}

const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names = {
      "scp", "wcp", "cqr", "cqr_shift", "dcp", "glcp", "glcp_shift",
      "lcp", "lcp_shift", "rlcp", "grlcp", "cc", "cc_shift", "batchgcp"};
  return names;
}

bool is_shift_method(const std::string& m) {
  return m == "wcp" || m == "cqr_shift" || m == "glcp_shift" || m == "lcp_shift" ||
         m == "grlcp" || m == "cc_shift";
}

PredictorSpec make_predictor(const std::string& method, const FittedComponents& comps,
                             std::optional<KernelSpec> kernel, CovariateFn ratio,
                             CalibrationMode mode) {
  PredictorSpec p;
  p.name = method;
  p.mode = mode;
  ScoreSpec& s = p.score;
  s.base.kind = comps.mean ? BaseKind::residual : BaseKind::response;
  s.base.mean = comps.mean;
  WeightSpec& w = p.weight;
  const bool shift = is_shift_method(method);
  if (shift) {
    if (!ratio) throw ConfigError("method '" + method + "' needs a density ratio r_X");
    w.ratio = ratio;
    w.kind = WeightKind::density_ratio;
  }

  if (method == "scp" || method == "wcp") {
    s.kind = ScoreKind::residual;
  } else if (method == "cqr" || method == "cqr_shift") {
    if (comps.lower && comps.upper) {
      s.kind = ScoreKind::cqr_two_sided;
      s.lower = comps.lower;
      s.upper = comps.upper;
    } else {
      s.kind = ScoreKind::cqr_one_sided;
      s.quantile = comps.quantile;
    }
  } else if (method == "dcp") {
    s.kind = ScoreKind::dcp;
    s.base.kind = BaseKind::response;
    s.cdf = comps.response_cdf;
  } else if (method == "glcp" || method == "glcp_shift") {
    s.kind = ScoreKind::glcp_identity;
    s.cdf = comps.score_cdf;
  } else if (method == "lcp" || method == "lcp_shift") {
    s.kind = ScoreKind::lcp_rank;
    s.kernel = kernel;
    s.lcp_self = comps.lcp_self;
  } else if (method == "rlcp" || method == "grlcp") {
    s.kind = ScoreKind::residual;
    w.kind = method == "rlcp" ? WeightKind::randomized_local : WeightKind::shift_local;
    w.kernel = kernel;
  } else if (method == "cc" || method == "cc_shift") {
    s.kind = ScoreKind::cc_centered;
    s.cc = comps.cc;
  } else if (method == "batchgcp") {
    s.kind = ScoreKind::batchgcp;
    s.groups = comps.groups;
    s.cc = comps.cc;
  } else {
    throw ConfigError("unknown method '" + method + "'");
  }
  p.validate();
  return p;
}

namespace {

std::vector<Interval> accepted_pieces(const StepCdf& step, double q) {
  std::vector<Interval> out;
  const std::size_t k = step.breakpoints.size();
  if (step.initial <= q) out.push_back({-kInf, k ? step.breakpoints[0] : kInf});
  for (std::size_t j = 0; j < k; ++j) {
    if (step.values[j] <= q) {
      out.push_back({step.breakpoints[j], j + 1 < k ? step.breakpoints[j + 1] : kInf});
    }
  }
  return out;
}

}  // namespace

CalibratedPredictor::CalibratedPredictor(PredictorSpec spec, Dataset calib, Level level)
    : spec_(std::move(spec)), calib_(std::move(calib)), level_(level) {
  spec_.validate();
  calib_.validate();
  const std::size_t n = calib_.size();
  if (n == 0) throw DomainError("empty calibration set");
  const ScoreSpec& s = spec_.score;

  base_.resize(n);
  if (s.kind != ScoreKind::cqr_two_sided && s.kind != ScoreKind::custom) {
    for (std::size_t i = 0; i < n; ++i) base_[i] = s.base.eval(calib_.row(i), calib_.y[i]);
  }

  if (s.kind == ScoreKind::cc_centered) {
    const BasisSpec basis = s.cc.basis.value_or(BasisSpec::intercept_and_coordinates(calib_.dim()));
    const double lambda = s.cc.lambda.value_or(default_cc_lambda(basis.d0(), n));
    cc_model_ = std::make_shared<PinballModel>(
        fit_pinball_qr(calib_.x, base_, basis, level_, lambda, s.cc.norm_bound, s.cc.solver));
  }
  if (s.kind == ScoreKind::batchgcp) {
    adjustment_ = s.adjustment ? s.adjustment
                               : std::make_shared<GroupAdjustment>(
                                     fit_batchgcp(calib_.x, base_, s.groups, level_, s.cc.solver));
  }
  if (s.kind == ScoreKind::lcp_rank) {
    base_order_ = sort_order(base_);
    sorted_base_.resize(n);
    for (std::size_t k = 0; k < n; ++k) sorted_base_[k] = base_[base_order_[k]];
    lcp_num_.assign(n, 0.0);
    lcp_den_.assign(n, 0.0);
    const double self = s.lcp_self == LcpSelf::include ? 1.0 : 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto xi = calib_.row(i);
      for (std::size_t j = 0; j < n; ++j) {
        const double k = i == j ? self : kernel_eval(*s.kernel, xi, calib_.row(j));
        lcp_den_[i] += k;
        if (base_[j] <= base_[i]) lcp_num_[i] += k;
      }
      if (lcp_den_[i] == 0.0) {
        // Empty neighborhood: fall back to the unweighted rank among the other points.
        for (std::size_t j = 0; j < n; ++j) {
          if (j == i) continue;
          lcp_den_[i] += 1.0;
          if (base_[j] <= base_[i]) lcp_num_[i] += 1.0;
        }
        if (lcp_den_[i] == 0.0) lcp_num_[i] = lcp_den_[i] = 1.0;
      }
    }
  }

  scores_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto xi = calib_.row(i);
    switch (s.kind) {
      case ScoreKind::lcp_rank:
        scores_[i] = lcp_num_[i] / lcp_den_[i];
        break;
      case ScoreKind::dcp:
        scores_[i] =
            std::abs(s.cdf->at(xi, DegeneratePolicy::global_ecdf).eval(calib_.y[i]) - 0.5);
        break;
      case ScoreKind::glcp_identity:
        scores_[i] = s.cdf->at(xi, DegeneratePolicy::global_ecdf).eval(base_[i]);
        break;
      default:
        scores_[i] = test_score(xi, calib_.y[i]);
    }
  }
  order_ = sort_order(scores_);
  sorted_scores_.resize(n);
  for (std::size_t k = 0; k < n; ++k) sorted_scores_[k] = scores_[order_[k]];

  if (spec_.weight.kind == WeightKind::density_ratio) {
    fixed_weights_.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      const double r = spec_.weight.ratio(calib_.row(order_[k]));
      if (!(r > 0.0) || !std::isfinite(r)) throw DomainError("density ratio must be positive");
      fixed_weights_[k] = r;
    }
  } else if (spec_.weight.kind == WeightKind::uniform) {
    fixed_weights_.assign(n, 1.0);
  }
}

double CalibratedPredictor::center(std::span<const double> x) const {
  const ScoreSpec& s = spec_.score;
  switch (s.kind) {
    case ScoreKind::cqr_one_sided: return predict_quantile(*s.quantile, x);
    case ScoreKind::cc_centered: return predict_quantile(*cc_model_, x);
    case ScoreKind::batchgcp: return adjustment_->eval(x);
    default: return 0.0;
  }
}

StepCdf CalibratedPredictor::step_score(std::span<const double> x) const {
  const ScoreSpec& s = spec_.score;
  if (s.kind == ScoreKind::dcp) {
    StepCdf st = s.cdf->at(x, DegeneratePolicy::global_ecdf);
    st.initial = std::abs(st.initial - 0.5);
    for (auto& v : st.values) v = std::abs(v - 0.5);
    return st;
  }
  if (s.kind == ScoreKind::glcp_identity) return s.cdf->at(x, DegeneratePolicy::global_ecdf);
  // LCP: (c + sum_j K(x,X_j) 1{V_j <= v}) / (c + sum_j K(x,X_j)), c = K(x,x) or 0.
  const std::size_t n = sorted_base_.size();
  std::vector<double> k(n);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    k[j] = kernel_eval(*s.kernel, x, calib_.row(base_order_[j]));
    total += k[j];
  }
  const double self = s.lcp_self == LcpSelf::include ? 1.0 : 0.0;
  if (total == 0.0 && self == 0.0) {
    std::fill(k.begin(), k.end(), 1.0);
    total = static_cast<double>(n);
  }
  StepCdf st;
  const double denom = self + total;
  st.initial = self / denom;
  double cum = self;
  std::size_t j = 0;
  while (j < n) {
    const double b = sorted_base_[j];
    while (j < n && sorted_base_[j] == b) cum += k[j++];
    st.breakpoints.push_back(b);
    st.values.push_back(cum / denom);
  }
  return st;
}

double CalibratedPredictor::test_score(std::span<const double> x, double y) const {
  const ScoreSpec& s = spec_.score;
  switch (s.kind) {
    case ScoreKind::residual:
      return s.base.eval(x, y);
    case ScoreKind::cqr_two_sided:
      return std::max(y - predict_quantile(*s.upper, x), predict_quantile(*s.lower, x) - y);
    case ScoreKind::cqr_one_sided:
    case ScoreKind::cc_centered:
    case ScoreKind::batchgcp:
      return s.base.eval(x, y) - center(x);
    case ScoreKind::dcp:
      return step_score(x).eval(y);
    case ScoreKind::glcp_identity:
    case ScoreKind::lcp_rank:
      return step_score(x).eval(s.base.eval(x, y));
    case ScoreKind::custom:
      return s.custom(x, y);
  }
  return 0.0;
}

std::vector<double> CalibratedPredictor::raw_weights(std::span<const double> x,
                                                     const RegionOptions& opts,
                                                     double& test_weight) const {
  const WeightSpec& w = spec_.weight;
  const std::size_t n = calib_.size();
  std::vector<double> out(n, 1.0);
  test_weight = 1.0;
  if (w.kind == WeightKind::uniform) return out;
  if (w.randomized() && opts.auxiliary.size() != x.size()) {
    throw ConfigError("randomized weights need an auxiliary covariate of matching dimension");
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto xi = calib_.row(i);
    double v = 1.0;
    if (w.kind != WeightKind::randomized_local) v *= w.ratio(xi);
    if (w.randomized()) v *= kernel_eval(*w.kernel, xi, opts.auxiliary);
    out[i] = v;
  }
  if (w.kind != WeightKind::randomized_local) test_weight *= w.ratio(x);
  if (w.randomized()) test_weight *= kernel_eval(*w.kernel, x, opts.auxiliary);
  return out;
}

CalibratedPredictor::TestWeights CalibratedPredictor::weights_for(std::span<const double> x,
                                                                  const RegionOptions& opts) const {
  TestWeights tw;
  const WeightSpec& w = spec_.weight;
  if (w.kind == WeightKind::uniform) {
    tw.sorted = fixed_weights_;
    return tw;
  }
  if (w.kind == WeightKind::density_ratio) {
    tw.sorted = fixed_weights_;
    tw.test = w.ratio(x);
    return tw;
  }
  const std::vector<double> raw = raw_weights(x, opts, tw.test);
  tw.sorted.resize(raw.size());
  for (std::size_t k = 0; k < raw.size(); ++k) tw.sorted[k] = raw[order_[k]];
  return tw;
}

double CalibratedPredictor::threshold(std::span<const double> x, const RegionOptions& opts) const {
  const TestWeights tw = weights_for(x, opts);
  return weighted_quantile_sorted(sorted_scores_, tw.sorted, tw.test, level_);
}

PredictionRegion CalibratedPredictor::vset_to_region(std::span<const double> x,
                                                     std::vector<Interval> vset) const {
  const BaseScore& base = spec_.score.base;
  if (base.kind == BaseKind::response) return PredictionRegion(std::move(vset), Representation::analytic);
  const double mu = base.center(x);
  std::vector<Interval> out;
  for (const auto& iv : vset) {
    const double a = std::max(iv.lo, 0.0);
    const double b = iv.hi;
    if (b < a) continue;
    out.push_back({mu - b, mu - a});
    out.push_back({mu + a, mu + b});
  }
  return PredictionRegion(std::move(out), Representation::analytic);
}

PredictionRegion CalibratedPredictor::analytic_region(std::span<const double> x, double q) const {
  if (q == kInf) return PredictionRegion::whole_line();
  const ScoreSpec& s = spec_.score;
  switch (s.kind) {
    case ScoreKind::residual:
      return vset_to_region(x, {{-kInf, q}});
    case ScoreKind::cqr_one_sided:
    case ScoreKind::cc_centered:
    case ScoreKind::batchgcp:
      return vset_to_region(x, {{-kInf, center(x) + q}});
    case ScoreKind::cqr_two_sided: {
      const double lo = predict_quantile(*s.lower, x) - q;
      const double hi = predict_quantile(*s.upper, x) + q;
      if (lo > hi) return PredictionRegion::empty();
      return PredictionRegion({{lo, hi}}, Representation::analytic);
    }
    case ScoreKind::dcp:
      return PredictionRegion(accepted_pieces(step_score(x), q), Representation::analytic);
    case ScoreKind::glcp_identity:
    case ScoreKind::lcp_rank:
      return vset_to_region(x, accepted_pieces(step_score(x), q));
    case ScoreKind::custom:
      break;
  }
  throw UnsupportedError("score kind has no analytic inversion");
}

void CalibratedPredictor::exact_scores(std::span<const double> x, double y,
                                       std::vector<double>& cal, double& test) const {
  const ScoreSpec& s = spec_.score;
  const std::size_t n = calib_.size();
  const double vt = s.base.eval(x, y);
  cal.resize(n);
  if (s.kind == ScoreKind::lcp_rank) {
    for (std::size_t i = 0; i < n; ++i) {
      const double k = kernel_eval(*s.kernel, calib_.row(i), x);
      cal[i] = (lcp_num_[i] + (vt <= base_[i] ? k : 0.0)) / (lcp_den_[i] + k);
    }
    test = step_score(x).eval(vt);
    return;
  }
  Dataset aug;
  aug.x.resize(static_cast<Eigen::Index>(n + 1), calib_.x.cols());
  aug.x.topRows(static_cast<Eigen::Index>(n)) = calib_.x;
  for (std::size_t k = 0; k < x.size(); ++k) {
    aug.x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k)) = x[k];
  }
  aug.y = base_;
  aug.y.push_back(vt);
  const BasisSpec basis = s.cc.basis.value_or(BasisSpec::intercept_and_coordinates(calib_.dim()));
  const double lambda = s.cc.lambda.value_or(default_cc_lambda(basis.d0(), n + 1));
  const PinballModel m =
      fit_pinball_qr(aug.x, aug.y, basis, level_, lambda, s.cc.norm_bound, s.cc.solver);
  for (std::size_t i = 0; i < n; ++i) cal[i] = base_[i] - predict_quantile(m, calib_.row(i));
  test = vt - predict_quantile(m, x);
}

PredictionRegion CalibratedPredictor::grid_region(std::span<const double> x,
                                                  const RegionOptions& opts) const {
  const Interval domain = opts.y_domain.value_or(default_y_domain(calib_.y));
  const std::vector<double> grid = make_grid(domain, opts.resolution);
  std::vector<bool> mask(grid.size(), false);
  if (spec_.mode == CalibrationMode::fast) {
    const double q = threshold(x, opts);
    for (std::size_t g = 0; g < grid.size(); ++g) mask[g] = test_score(x, grid[g]) <= q;
  } else {
    double test_w = 1.0;
    const std::vector<double> w = raw_weights(x, opts, test_w);
    std::vector<double> cal;
    double test = 0.0;
    for (std::size_t g = 0; g < grid.size(); ++g) {
      exact_scores(x, grid[g], cal, test);
      WeightedScoreSample sample{cal, w, test_w};
      mask[g] = test <= weighted_quantile(sample, level_);
    }
  }
  return PredictionRegion::from_grid_mask(grid, mask);
}

PredictionRegion CalibratedPredictor::region(std::span<const double> x,
                                             const RegionOptions& opts) const {
  if (opts.resolution < 8) {
    throw ConfigError("grid resolution must be at least 8, got " + std::to_string(opts.resolution));
  }
  if (x.size() != calib_.dim()) throw DimensionError("test covariate dimension mismatch");
  if (spec_.mode == CalibrationMode::exact || spec_.score.kind == ScoreKind::custom) {
    return grid_region(x, opts);
  }
  return analytic_region(x, threshold(x, opts));
}

double CalibratedPredictor::p_value(std::span<const double> x, double y,
                                    const RegionOptions& opts) const {
  if (x.size() != calib_.dim()) throw DimensionError("test covariate dimension mismatch");
  if (spec_.mode == CalibrationMode::exact) {
    double test_w = 1.0;
    const std::vector<double> w = raw_weights(x, opts, test_w);
    std::vector<double> cal;
    double test = 0.0;
    exact_scores(x, y, cal, test);
    return weighted_p_value(cal, w, test, test_w, opts.convention);
  }
  const TestWeights tw = weights_for(x, opts);
  return weighted_p_value_sorted(sorted_scores_, tw.sorted, test_score(x, y), tw.test,
                                 opts.convention);
}

std::vector<double> CalibratedPredictor::draw_auxiliary(std::span<const double> x, Rng& rng) const {
  if (!spec_.weight.randomized()) return {};
  return sample_auxiliary_covariate(*spec_.weight.kernel, x, rng);
}

PredictionRegion build_prediction_region(const PredictorSpec& spec, const Dataset& calib,
                                         std::span<const double> x_test, Level level,
                                         const RegionOptions& opts) {
  return CalibratedPredictor(spec, calib, level).region(x_test, opts);
}

double conformal_p_value(const PredictorSpec& spec, const Dataset& calib,
                         std::span<const double> x_test, double y_test, Level level,
                         const RegionOptions& opts) {
  return CalibratedPredictor(spec, calib, level).p_value(x_test, y_test, opts);
}

double oracle_conditional_quantile_gap(const PredictorSpec& spec, const DgpSpec& dgp,
                                       std::span<const double> t, Level level,
                                       const GapOptions& opts) {
  dgp.validate();
  if (t.size() != dgp.d) throw DimensionError("t dimension differs from the dgp");
  const ScoreKind kind = spec.score.kind;
  // The oracle DCP score |U - 1/2| and the oracle CQR score have x-free conditional laws,
  // so every weighted mixture equals the conditional law.
  if (kind == ScoreKind::dcp || kind == ScoreKind::cqr_one_sided ||
      kind == ScoreKind::cqr_two_sided) {
    return 0.0;
  }
  if (kind != ScoreKind::residual) {
    throw UnsupportedError("no closed-form oracle score for " + to_string(kind));
  }
  const WeightKind wk = spec.weight.kind;
  if (wk != WeightKind::uniform && wk != WeightKind::density_ratio) {
    throw UnsupportedError("oracle gap needs deterministic weights");
  }
  const double z = normal_quantile(1.0 - level.alpha() / 2.0);
  const double conditional = z * dgp_noise_sd(dgp, t);

  Rng rng(opts.seed, 0x6a70);
  const double scale = wk == WeightKind::density_ratio ? dgp.sigma_x : 1.0;
  std::vector<double> sds(opts.monte_carlo);
  std::vector<double> xi(dgp.d);
  double max_sd = 0.0;
  for (auto& sd : sds) {
    for (auto& v : xi) v = scale * rng.normal();
    sd = dgp_noise_sd(dgp, xi);
    max_sd = std::max(max_sd, sd);
  }
  auto mixture_cdf = [&](double u) {
    double acc = 0.0;
    for (double sd : sds) acc += sd == 0.0 ? 1.0 : 2.0 * normal_cdf(u / sd) - 1.0;
    return acc / static_cast<double>(sds.size());
  };
  double lo = 0.0;
  double hi = std::max(1e-12, 10.0 * max_sd);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mixture_cdf(mid) >= level.coverage()) {
      hi = mid;
    } else {
      lo = mid;
    }
    if (hi - lo <= 1e-12 * std::max(1.0, hi)) break;
  }
  return std::abs(conditional - hi);
}

}  // namespace ckit
