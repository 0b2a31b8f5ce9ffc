#include "conformal_kit/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include "conformal_kit/errors.hpp"
#include "conformal_kit/estimators.hpp"

namespace ckit {

void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::size_t failed_at = count;
  std::exception_ptr failure;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (i < failed_at) {
          failed_at = i;
          failure = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(jobs);
  for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::string to_string(BandwidthRule r) {
  switch (r) {
    case BandwidthRule::neff: return "neff";
    case BandwidthRule::fixed: return "fixed";
    case BandwidthRule::rate: return "rate";
  }
  return "neff";
}

BandwidthRule bandwidth_rule_from_string(const std::string& name) {
  if (name == "neff") return BandwidthRule::neff;
  if (name == "fixed") return BandwidthRule::fixed;
  if (name == "rate") return BandwidthRule::rate;
  throw ConfigError("unknown bandwidth rule: " + name);
}

void ExperimentConfig::validate() const {
  dgp.validate();
  Level{alpha};
  if (reps == 0) throw ConfigError("reps must be at least 1");
  if (methods.empty()) throw ConfigError("at least one method is required");
  const auto& known = method_names();
  for (const auto& m : methods) {
    if (std::find(known.begin(), known.end(), m) == known.end()) {
      throw ConfigError("unknown method '" + m + "'");
    }
  }
  if (dgp.n_tr < 4) throw ConfigError("n_tr must be at least 4");
  if (resolution < 8) throw ConfigError("grid resolution must be at least 8");
  if (bandwidth.rule == BandwidthRule::neff &&
      (bandwidth.target_neff <= 1.0 || bandwidth.target_neff > static_cast<double>(dgp.n))) {
    throw ConfigError("target n_eff must lie in (1, n]");
  }
  if (bandwidth.rule == BandwidthRule::fixed && !(bandwidth.fixed > 0.0)) {
    throw ConfigError("fixed bandwidth must be positive");
  }
  if (bandwidth.rule == BandwidthRule::rate && !(bandwidth.rate_constant > 0.0)) {
    throw ConfigError("rate constant must be positive");
  }
  if (cqr_lambda < 0.0) throw ConfigError("cqr lambda must be nonnegative");
}

const MethodSummary& MetricsTable::method(const std::string& name) const {
  for (const auto& s : summary) {
    if (s.method == name) return s;
  }
  throw ConfigError("method '" + name + "' not in table");
}

MethodSummary summarize_coverage(const std::string& method,
                                 const std::vector<std::vector<double>>& coverage,
                                 const std::vector<double>& lengths, double target) {
  MethodSummary s;
  s.method = method;
  const std::size_t reps = coverage.size();
  if (reps == 0) return s;
  const std::size_t m = coverage[0].size();
  std::vector<double> per_rep(reps, 0.0);
  std::vector<double> per_point(m, 0.0);
  for (std::size_t j = 0; j < reps; ++j) {
    for (std::size_t i = 0; i < m; ++i) {
      per_rep[j] += coverage[j][i];
      per_point[i] += coverage[j][i];
    }
    per_rep[j] /= static_cast<double>(m);
  }
  s.marginal = std::accumulate(per_rep.begin(), per_rep.end(), 0.0) / static_cast<double>(reps);
  if (reps > 1) {
    double ss = 0.0;
    for (double v : per_rep) ss += (v - s.marginal) * (v - s.marginal);
    s.marginal_se = std::sqrt(ss / static_cast<double>(reps - 1) / static_cast<double>(reps));
  }
  for (double v : per_point) s.cond_miscov += std::fabs(v / static_cast<double>(reps) - target);
  s.cond_miscov /= static_cast<double>(m);
  if (!lengths.empty()) {
    s.mean_length =
        std::accumulate(lengths.begin(), lengths.end(), 0.0) / static_cast<double>(lengths.size());
  }
  return s;
}

std::vector<GroupIndicator> default_batchgcp_groups(std::size_t d) {
  std::vector<GroupIndicator> g;
  for (std::size_t k = 0; k < std::min<std::size_t>(d, 3); ++k) {
    g.push_back({"x" + std::to_string(k) + ">0", [k](std::span<const double> x) { return x[k] > 0.0; }});
  }
  return g;
}

namespace {

bool needs_kernel(const std::string& m) {
  return m == "lcp" || m == "lcp_shift" || m == "rlcp" || m == "grlcp" || m == "dcp" ||
         m == "glcp" || m == "glcp_shift";
}

bool uses(const ExperimentConfig& c, std::initializer_list<const char*> names) {
  for (const auto& m : c.methods) {
    for (const char* n : names) {
      if (m == n) return true;
    }
  }
  return false;
}

}  // namespace

RepetitionFit fit_repetition(const ExperimentConfig& config, const Dataset& train) {
  const std::size_t half = train.size() / 2;
  const Dataset tr1 = train.subset(0, half);
  const Dataset tr2 = train.subset(half, train.size());
  RepetitionFit fit;
  FittedComponents& c = fit.components;
  auto mean = std::make_shared<LinearMean>(LinearMean::fit(tr1.x, tr1.y));
  c.mean = mean;
  std::vector<double> v(tr2.size());
  for (std::size_t i = 0; i < tr2.size(); ++i) v[i] = std::fabs(tr2.y[i] - mean->predict(tr2.row(i)));

  const bool kernel_needed =
      std::any_of(config.methods.begin(), config.methods.end(), needs_kernel);
  if (kernel_needed) {
    double h = config.bandwidth.fixed;
    const auto n = static_cast<double>(config.dgp.n);
    if (config.bandwidth.rule == BandwidthRule::neff) {
      const std::size_t rows = std::min<std::size_t>(train.size(), 1000);
      const Matrix sub = train.x.topRows(static_cast<Eigen::Index>(rows));
      h = bandwidth_for_target_neff(config.bandwidth.target_neff, sub, config.kernel, n);
    } else if (config.bandwidth.rule == BandwidthRule::rate) {
      h = config.bandwidth.rate_constant *
          std::pow(n, -1.0 / (static_cast<double>(config.dgp.d) + 2.0));
    }
    fit.kernel = KernelSpec(config.kernel, h);
  }
  if (uses(config, {"cqr", "cqr_shift"})) {
    SolverConfig solver;
    solver.max_iterations = 4000;
    solver.fail_on_stall = false;
    c.quantile = std::make_shared<PinballModel>(
        fit_pinball_qr(tr2.x, v, BasisSpec::intercept_and_coordinates(train.dim()),
                       Level(config.alpha), config.cqr_lambda, std::nullopt, solver));
  }
  if (uses(config, {"dcp"})) {
    c.response_cdf = std::make_shared<ConditionalCdf>(*fit.kernel, tr2.x, tr2.y);
  }
  if (uses(config, {"glcp", "glcp_shift"})) {
    c.score_cdf = std::make_shared<ConditionalCdf>(*fit.kernel, tr2.x, v);
  }
  c.groups = default_batchgcp_groups(train.dim());
  c.lcp_self = config.lcp_self;
  c.cc.solver.fail_on_stall = false;
  return fit;
}

namespace {

constexpr std::uint64_t kResampleStream = 0xffffffffULL;

}  // namespace

MetricsTable run_coverage_experiment(const ExperimentConfig& config) {
  config.validate();
  const DgpSpec& spec = config.dgp;
  const Level level(config.alpha);
  const Rng master(spec.seed);
  Rng test_rng = master.child(0);
  const Matrix test_x = sample_covariates(spec.n_te, spec.d, spec.sigma_x, test_rng);
  const CovariateFn ratio = density_ratio(spec);
  const std::size_t nm = config.methods.size();
  const std::size_t nt = spec.n_te;

  // cov[rep][method][i], len[rep][method][i]
  std::vector<std::vector<std::vector<double>>> cov(config.reps), len(config.reps);
  std::vector<double> bandwidths(config.reps, 0.0);

  parallel_for(config.reps, config.jobs, [&](std::size_t rep) {
    try {
      Rng rep_rng = master.child(rep + 1);
      Rng train_rng = rep_rng.child(0);
      Rng calib_rng = rep_rng.child(1);
      const Dataset train =
          sample_responses(spec, sample_covariates(spec.n_tr, spec.d, 1.0, train_rng), train_rng);
      const Dataset calib =
          sample_responses(spec, sample_covariates(spec.n, spec.d, 1.0, calib_rng), calib_rng);
      Matrix own_test;
      if (config.resample_test) {
        Rng own_rng = rep_rng.child(kResampleStream);
        own_test = sample_covariates(spec.n_te, spec.d, spec.sigma_x, own_rng);
      }
      const Matrix& tx = config.resample_test ? own_test : test_x;
      const RepetitionFit fit = fit_repetition(config, train);
      bandwidths[rep] = fit.kernel ? fit.kernel->bandwidth : 0.0;
      cov[rep].assign(nm, std::vector<double>(nt, 0.0));
      len[rep].assign(nm, std::vector<double>(nt, 0.0));
      for (std::size_t m = 0; m < nm; ++m) {
        const std::string& name = config.methods[m];
        PredictorSpec ps = make_predictor(name, fit.components, fit.kernel,
                                          is_shift_method(name) ? ratio : CovariateFn{});
        const CalibratedPredictor pred(std::move(ps), calib, level);
        Rng aux_rng = rep_rng.child(2 + m);
        RegionOptions opts;
        opts.resolution = config.resolution;
        for (std::size_t i = 0; i < nt; ++i) {
          const auto x = row_span(tx, static_cast<Eigen::Index>(i));
          opts.auxiliary = pred.draw_auxiliary(x, aux_rng);
          const PredictionRegion r = pred.region(x, opts);
          cov[rep][m][i] = analytic_conditional_coverage(r, x, spec);
          len[rep][m][i] = r.length();
        }
      }
    } catch (const Error& e) {
      throw RepetitionError(rep, e.what());
    }
  });

  MetricsTable table;
  const double target = level.coverage();
  for (std::size_t m = 0; m < nm; ++m) {
    std::vector<std::vector<double>> c(config.reps);
    std::vector<double> lengths;
    lengths.reserve(config.reps * nt);
    for (std::size_t rep = 0; rep < config.reps; ++rep) {
      c[rep] = cov[rep][m];
      RepMetrics row;
      row.method = config.methods[m];
      row.rep = rep;
      row.bandwidth = bandwidths[rep];
      for (std::size_t i = 0; i < nt; ++i) {
        row.marginal += c[rep][i];
        row.cond_miscov += std::fabs(c[rep][i] - target);
        row.mean_length += len[rep][m][i];
        lengths.push_back(len[rep][m][i]);
      }
      row.marginal /= static_cast<double>(nt);
      row.cond_miscov /= static_cast<double>(nt);
      row.mean_length /= static_cast<double>(nt);
      table.rows.push_back(row);
    }
    table.summary.push_back(summarize_coverage(config.methods[m], c, lengths, target));
    if (config.keep_coverage) table.coverage.push_back(std::move(c));
  }
  return table;
}

PValueTable run_pvalue_experiment(const ExperimentConfig& config, PValueConvention convention) {
  config.validate();
  const DgpSpec& spec = config.dgp;
  const Level level(config.alpha);
  const Rng master(spec.seed);
  const CovariateFn ratio = density_ratio(spec);
  const std::size_t nm = config.methods.size();
  PValueTable out;
  out.methods = config.methods;
  out.p.assign(nm, std::vector<double>(config.reps, 0.0));
  out.rejection.assign(nm, 0.0);
  auto& p = out.p;
  parallel_for(config.reps, config.jobs, [&](std::size_t rep) {
    try {
      Rng rep_rng = master.child(rep + 1);
      Rng train_rng = rep_rng.child(0);
      Rng calib_rng = rep_rng.child(1);
      Rng test_rng = rep_rng.child(2);
      const Dataset train =
          sample_responses(spec, sample_covariates(spec.n_tr, spec.d, 1.0, train_rng), train_rng);
      const Dataset calib =
          sample_responses(spec, sample_covariates(spec.n, spec.d, 1.0, calib_rng), calib_rng);
      const Dataset test =
          sample_responses(spec, sample_covariates(1, spec.d, spec.sigma_x, test_rng), test_rng);
      const RepetitionFit fit = fit_repetition(config, train);
      for (std::size_t m = 0; m < nm; ++m) {
        const std::string& name = config.methods[m];
        const CalibratedPredictor pred(
            make_predictor(name, fit.components, fit.kernel,
                           is_shift_method(name) ? ratio : CovariateFn{}),
            calib, level);
        Rng aux_rng = rep_rng.child(3 + m);
        RegionOptions opts;
        opts.resolution = config.resolution;
        opts.convention = convention;
        opts.auxiliary = pred.draw_auxiliary(test.row(0), aux_rng);
        p[m][rep] = pred.p_value(test.row(0), test.y[0], opts);
      }
    } catch (const Error& e) {
      throw RepetitionError(rep, e.what());
    }
  });

  for (std::size_t m = 0; m < nm; ++m) {
    for (double v : p[m]) out.rejection[m] += v <= config.alpha;
    out.rejection[m] /= static_cast<double>(config.reps);
  }
  return out;
}

std::size_t SbmSpec::nodes() const {
  return std::accumulate(blocks.begin(), blocks.end(), std::size_t{0});
}

void SbmSpec::validate() const {
  if (blocks.empty()) throw ConfigError("SBM needs at least one block");
  for (auto b : blocks) {
    if (b == 0) throw ConfigError("SBM block sizes must be positive");
  }
  if (!(p_out >= 0.0 && p_out < p_in && p_in <= 1.0)) {
    if (!(p_out == p_in && p_in >= 0.0 && p_in <= 1.0)) {
      throw ConfigError("SBM probabilities need 0 <= p_out <= p_in <= 1");
    }
  }
  if (noise.size() != blocks.size()) throw ConfigError("one noise scale per block is required");
  for (double s : noise) {
    if (!(s > 0.0)) throw ConfigError("noise scales must be positive");
  }
  if (d == 0) throw ConfigError("SBM covariate dimension must be positive");
  if (nodes() < 2) throw ConfigError("SBM needs at least two nodes");
}

double sbm_mean(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return 2.0 * s / static_cast<double>(x.size());
}

namespace {

// Visits each index in [0, total) independently with probability p, by geometric skips.
template <class F>
void bernoulli_skip(std::uint64_t total, double p, Rng& rng, F&& visit) {
  if (p <= 0.0 || total == 0) return;
  if (p >= 1.0) {
    for (std::uint64_t k = 0; k < total; ++k) visit(k);
    return;
  }
  const double log_q = std::log1p(-p);
  double pos = -1.0;
  for (;;) {
    const double u = 1.0 - rng.uniform();
    pos += 1.0 + std::floor(std::log(u) / log_q);
    if (pos >= static_cast<double>(total)) return;
    visit(static_cast<std::uint64_t>(pos));
  }
}

}  // namespace

SbmDraw generate_sbm_graph(const SbmSpec& spec, Rng& rng) {
  spec.validate();
  const std::size_t n = spec.nodes();
  std::vector<std::size_t> start(spec.blocks.size() + 1, 0);
  for (std::size_t b = 0; b < spec.blocks.size(); ++b) start[b + 1] = start[b] + spec.blocks[b];
  std::vector<std::size_t> block_of(n);
  for (std::size_t b = 0; b < spec.blocks.size(); ++b) {
    for (std::size_t u = start[b]; u < start[b + 1]; ++u) block_of[u] = b;
  }
  Rng edge_rng = rng.child(0);
  Rng node_rng = rng.child(1);
  std::vector<std::vector<std::size_t>> adj(n);
  for (std::size_t a = 0; a < spec.blocks.size(); ++a) {
    for (std::size_t b = a; b < spec.blocks.size(); ++b) {
      const std::uint64_t na = spec.blocks[a];
      const std::uint64_t nb = spec.blocks[b];
      const double p = a == b ? spec.p_in : spec.p_out;
      if (a == b) {
        // Pairs (i < j) within the block, enumerated row by row.
        const std::uint64_t total = na * (na - 1) / 2;
        std::uint64_t row = 0;
        std::uint64_t row_start = 0;
        bernoulli_skip(total, p, edge_rng, [&](std::uint64_t k) {
          while (k >= row_start + (na - 1 - row)) {
            row_start += na - 1 - row;
            ++row;
          }
          const std::size_t i = start[a] + row;
          const std::size_t j = start[a] + row + 1 + (k - row_start);
          adj[i].push_back(j);
          adj[j].push_back(i);
        });
      } else {
        bernoulli_skip(na * nb, p, edge_rng, [&](std::uint64_t k) {
          const std::size_t i = start[a] + k / nb;
          const std::size_t j = start[b] + k % nb;
          adj[i].push_back(j);
          adj[j].push_back(i);
        });
      }
    }
  }
  for (auto& nb : adj) std::sort(nb.begin(), nb.end());
  SbmDraw draw;
  draw.graph.adjacency = std::move(adj);
  draw.graph.x = sample_covariates(n, spec.d, 1.0, node_rng);
  draw.graph.y.resize(n);
  for (std::size_t u = 0; u < n; ++u) {
    draw.graph.y[u] = sbm_mean(draw.graph.row(u)) + spec.noise[block_of[u]] * node_rng.normal();
  }
  draw.graph.test = n - 1;
  draw.planted = CommunityAssignment::from_labels(block_of);
  return draw;
}

Dataset sample_sbm_training(const SbmSpec& spec, std::size_t n, Rng& rng) {
  spec.validate();
  const double total = static_cast<double>(spec.nodes());
  Dataset out;
  out.x = sample_covariates(n, spec.d, 1.0, rng);
  out.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double u = rng.uniform() * total;
    std::size_t b = 0;
    while (b + 1 < spec.blocks.size() && u >= static_cast<double>(spec.blocks[b])) {
      u -= static_cast<double>(spec.blocks[b]);
      ++b;
    }
    out.y[i] = sbm_mean(out.row(i)) + spec.noise[b] * rng.normal();
  }
  return out;
}

void GraphExperimentConfig::validate() const {
  sbm.validate();
  Level{alpha};
  if (reps == 0) throw ConfigError("reps must be at least 1");
  if (tests_per_block == 0) throw ConfigError("tests_per_block must be at least 1");
  for (auto b : sbm.blocks) {
    if (b < tests_per_block) throw ConfigError("tests_per_block exceeds a block size");
  }
  if (train_size < sbm.d + 1) throw ConfigError("train_size too small for the mean model");
  if (resolution < 8) throw ConfigError("grid resolution must be at least 8");
}

GraphMetrics run_graph_experiment(const GraphExperimentConfig& config) {
  config.validate();
  const Level level(config.alpha);
  const std::size_t nb = config.sbm.blocks.size();
  const Rng master(config.sbm.seed);

  struct RepOut {
    std::vector<double> g_cov, s_cov, g_len, s_len;
    std::vector<std::size_t> count;
    double gap = 0.0, scaled_gap = 0.0, mis = 0.0;
    bool grid_exact = true;
  };
  std::vector<RepOut> outs(config.reps);

  parallel_for(config.reps, config.jobs, [&](std::size_t rep) {
    try {
      Rng rep_rng = master.child(rep);
      Rng graph_rng = rep_rng.child(0);
      Rng train_rng = rep_rng.child(1);
      Rng detect_rng = rep_rng.child(2);
      Rng pick_rng = rep_rng.child(3);
      SbmDraw draw = generate_sbm_graph(config.sbm, graph_rng);
      const Dataset train = sample_sbm_training(config.sbm, config.train_size, train_rng);
      BaseScore base;
      base.kind = BaseKind::residual;
      base.mean = std::make_shared<LinearMean>(LinearMean::fit(train.x, train.y));

      RepOut& o = outs[rep];
      o.g_cov.assign(nb, 0.0);
      o.s_cov.assign(nb, 0.0);
      o.g_len.assign(nb, 0.0);
      o.s_len.assign(nb, 0.0);
      o.count.assign(nb, 0);
      CommunityAssignment assignment = draw.planted;
      if (config.detect) {
        assignment = detect_communities(draw.graph, detect_rng, config.detection);
        o.mis = misclustering_rate(assignment, draw.planted);
      }
      const auto sizes = assignment.sizes();
      const double m_min = static_cast<double>(*std::min_element(sizes.begin(), sizes.end()));

      std::vector<std::size_t> tests;
      std::size_t first = 0;
      for (std::size_t b = 0; b < nb; ++b) {
        std::vector<std::size_t> ids(config.sbm.blocks[b]);
        std::iota(ids.begin(), ids.end(), first);
        for (std::size_t k = 0; k < config.tests_per_block; ++k) {
          const std::size_t j = k + pick_rng.below(ids.size() - k);
          std::swap(ids[k], ids[j]);
          tests.push_back(ids[k]);
        }
        first += config.sbm.blocks[b];
      }

      GraphData& g = draw.graph;
      const std::size_t n = g.num_nodes();
      std::vector<double> all_base(n);
      for (std::size_t u = 0; u < n; ++u) all_base[u] = base.eval(g.row(u), g.y[u]);
      bool checked = false;
      for (std::size_t t : tests) {
        g.test = t;
        const std::size_t b = draw.planted.labels[t];
        const auto xt = g.row(t);
        const double mu_hat = base.center(xt);
        const double mu = sbm_mean(xt);
        const double sd = config.sbm.noise[b];

        std::vector<double> others;
        others.reserve(n - 1);
        double top = 0.0;
        for (std::size_t u = 0; u < n; ++u) {
          if (u == t) continue;
          others.push_back(all_base[u]);
          top = std::max(top, all_base[u]);
        }
        WeightedScoreSample pooled{others, std::vector<double>(others.size(), 1.0), 1.0};
        const double q_std = weighted_quantile(pooled, level);
        const PredictionRegion std_region({{mu_hat - q_std, mu_hat + q_std}}, Representation::analytic);

        const double half = 1.5 * top + 1.0;
        const std::vector<double> grid =
            make_grid({mu_hat - half, mu_hat + half}, config.resolution);
        const PredictionRegion region =
            graphcp_region(g, assignment, base, level, grid, config.mode);

        o.g_cov[b] += normal_region_mass(region, mu, sd);
        o.s_cov[b] += normal_region_mass(std_region, mu, sd);
        o.g_len[b] += region.length();
        o.s_len[b] += std_region.length();
        ++o.count[b];

        if (!checked) {
          checked = true;
          const GraphCalibration cal = graphcp_calibration(g, assignment, base, level);
          o.gap = std::fabs(cal.threshold - level.coverage());
          o.scaled_gap = o.gap * m_min;
          std::vector<std::vector<double>> by(assignment.count);
          for (std::size_t u = 0; u < n; ++u) {
            if (u != t) by[assignment.labels[u]].push_back(cal.ranks[u]);
          }
          for (auto& r : by) {
            std::sort(r.begin(), r.end());
            const double m = static_cast<double>(r.size());
            for (std::size_t k = 0; k < r.size(); ++k) {
              if (r[k] != static_cast<double>(k + 1) / m) o.grid_exact = false;
            }
          }
        }
      }
    } catch (const Error& e) {
      throw RepetitionError(rep, e.what());
    }
  });

  GraphMetrics out;
  out.graphcp_coverage.assign(nb, 0.0);
  out.stdcp_coverage.assign(nb, 0.0);
  out.graphcp_length.assign(nb, 0.0);
  out.stdcp_length.assign(nb, 0.0);
  out.evaluations.assign(nb, 0);
  for (const auto& o : outs) {
    for (std::size_t b = 0; b < nb; ++b) {
      out.graphcp_coverage[b] += o.g_cov[b];
      out.stdcp_coverage[b] += o.s_cov[b];
      out.graphcp_length[b] += o.g_len[b];
      out.stdcp_length[b] += o.s_len[b];
      out.evaluations[b] += o.count[b];
    }
    out.max_threshold_gap = std::max(out.max_threshold_gap, o.gap);
    out.max_scaled_threshold_gap = std::max(out.max_scaled_threshold_gap, o.scaled_gap);
    out.rank_grid_exact = out.rank_grid_exact && o.grid_exact;
    out.mean_misclustering += o.mis / static_cast<double>(config.reps);
  }
  for (std::size_t b = 0; b < nb; ++b) {
    const double c = static_cast<double>(out.evaluations[b]);
    out.graphcp_coverage[b] /= c;
    out.stdcp_coverage[b] /= c;
    out.graphcp_length[b] /= c;
    out.stdcp_length[b] /= c;
  }
  return out;
}

void HierSpec::validate() const {
  if (branches < 2) throw ConfigError("hierarchical layout needs at least 2 branches");
  if (per_branch < 2) throw ConfigError("hierarchical layout needs at least 2 points per branch");
  if (d == 0) throw ConfigError("covariate dimension must be positive");
  if (!(tau_low > 0.0 && tau_low <= tau_high)) throw ConfigError("need 0 < tau_low <= tau_high");
}

double hier_mean(const HierSpec& spec, std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v;
  return spec.slope * s / static_cast<double>(x.size());
}

HierDraw generate_hierarchical(const HierSpec& spec, Rng& rng) {
  spec.validate();
  HierDraw draw;
  HierData& h = draw.data;
  h.branches = spec.branches;
  h.per_branch = spec.per_branch;
  h.x = sample_covariates(h.size(), spec.d, 1.0, rng);
  h.y.resize(h.size());
  draw.tau.resize(spec.branches);
  for (std::size_t k = 0; k < spec.branches; ++k) {
    draw.tau[k] = spec.tau_low + (spec.tau_high - spec.tau_low) * rng.uniform();
    for (std::size_t i = 0; i < spec.per_branch; ++i) {
      const std::size_t r = h.index(k, i);
      h.y[r] = hier_mean(spec, h.row(r)) + draw.tau[k] * rng.normal();
    }
  }
  return draw;
}

void HierExperimentConfig::validate() const {
  hier.validate();
  Level{alpha};
  if (reps == 0) throw ConfigError("reps must be at least 1");
  if (test_points == 0) throw ConfigError("test_points must be at least 1");
  if (resolution < 8) throw ConfigError("grid resolution must be at least 8");
  if (tau_bins.size() < 2 || !std::is_sorted(tau_bins.begin(), tau_bins.end())) {
    throw ConfigError("tau_bins must be ascending with at least two edges");
  }
  if (!std::is_sorted(x_cuts.begin(), x_cuts.end())) throw ConfigError("x_cuts must be ascending");
}

HierMetrics run_hier_experiment(const HierExperimentConfig& config) {
  config.validate();
  const Level level(config.alpha);
  const Rng master(config.hier.seed);
  std::vector<std::vector<HierRecord>> per_rep(config.reps);

  parallel_for(config.reps, config.jobs, [&](std::size_t rep) {
    try {
      Rng rep_rng = master.child(rep);
      Rng data_rng = rep_rng.child(0);
      Rng test_rng = rep_rng.child(1);
      HierDraw draw = generate_hierarchical(config.hier, data_rng);
      HierData& data = draw.data;
      const std::size_t t = data.test_index();
      std::vector<double> observed(data.y.begin(), data.y.end() - 1);
      const std::vector<double> grid = make_grid(default_y_domain(observed), config.resolution);
      for (std::size_t p = 0; p < config.test_points; ++p) {
        for (Eigen::Index c = 0; c < data.x.cols(); ++c) {
          data.x(static_cast<Eigen::Index>(t), c) = test_rng.normal();
        }
        const auto xt = data.row(t);
        const PredictionRegion region =
            hierarchical_region(data, config.kind, level, grid, config.options);
        HierRecord r;
        r.rep = rep;
        r.tau = draw.tau.back();
        r.x0 = xt[0];
        r.coverage = normal_region_mass(region, hier_mean(config.hier, xt), r.tau);
        r.length = region.length();
        per_rep[rep].push_back(r);
      }
    } catch (const Error& e) {
      throw RepetitionError(rep, e.what());
    }
  });

  HierMetrics out;
  const double target = level.coverage();
  const std::size_t ntau = config.tau_bins.size() - 1;
  out.x_bins = config.x_cuts.size() + 1;
  out.bin_coverage.assign(ntau * out.x_bins, 0.0);
  out.bin_counts.assign(ntau * out.x_bins, 0);
  std::vector<double> rep_means;
  for (const auto& rs : per_rep) {
    double m = 0.0;
    for (const auto& r : rs) {
      out.records.push_back(r);
      m += r.coverage;
      out.mean_length += r.length;
      out.cond_miscov += std::fabs(r.coverage - target);
      const auto it = std::upper_bound(config.tau_bins.begin(), config.tau_bins.end(), r.tau);
      std::size_t tb = it == config.tau_bins.begin()
                           ? 0
                           : static_cast<std::size_t>(it - config.tau_bins.begin()) - 1;
      tb = std::min(tb, ntau - 1);
      const auto xb = static_cast<std::size_t>(
          std::upper_bound(config.x_cuts.begin(), config.x_cuts.end(), r.x0) - config.x_cuts.begin());
      out.bin_coverage[tb * out.x_bins + xb] += r.coverage;
      ++out.bin_counts[tb * out.x_bins + xb];
    }
    rep_means.push_back(m / static_cast<double>(rs.size()));
  }
  const double total = static_cast<double>(out.records.size());
  out.mean_length /= total;
  out.cond_miscov /= total;
  for (std::size_t b = 0; b < out.bin_counts.size(); ++b) {
    if (out.bin_counts[b] > 0) out.bin_coverage[b] /= static_cast<double>(out.bin_counts[b]);
  }
  const double R = static_cast<double>(rep_means.size());
  out.marginal = std::accumulate(rep_means.begin(), rep_means.end(), 0.0) / R;
  if (rep_means.size() > 1) {
    double ss = 0.0;
    for (double v : rep_means) ss += (v - out.marginal) * (v - out.marginal);
    out.marginal_se = std::sqrt(ss / (R - 1.0) / R);
  }
  return out;
}

}  // namespace ckit

namespace ckit {

void SelectionExperimentConfig::validate() const {
  dgp.validate();
  Level{alpha};
  if (reps == 0) throw ConfigError("reps must be at least 1");
  if (targets.empty()) throw ConfigError("at least one n_eff target is required");
  if (dgp.n_tr < 4) throw ConfigError("n_tr must be at least 4");
  if (!(over_scale > 0.0) || !(under_scale > 0.0)) throw ConfigError("scales must be positive");
}

std::vector<PredictorSpec> rigged_selection_pool(const SelectionExperimentConfig& config,
                                                 const Dataset& train) {
  const Level level(config.alpha);
  const std::size_t half = train.size() / 2;
  const Dataset tr1 = train.subset(0, half);
  const Dataset tr2 = train.subset(half, train.size());
  auto mean = std::make_shared<LinearMean>(LinearMean::fit(tr1.x, tr1.y));
  std::vector<double> v(tr2.size());
  for (std::size_t i = 0; i < tr2.size(); ++i) v[i] = std::fabs(tr2.y[i] - mean->predict(tr2.row(i)));

  BasisSpec good = BasisSpec::intercept_only();
  good.add("sqrt_mean_abs", [](std::span<const double> x) {
    double s = 0.0;
    for (double a : x) s += std::fabs(a);
    return std::sqrt(s / static_cast<double>(x.size()));
  });
  SolverConfig solver;
  solver.max_iterations = 4000;
  solver.fail_on_stall = false;
  const PinballModel fit_good = fit_pinball_qr(tr2.x, v, good, level, 0.0, std::nullopt, solver);
  const PinballModel fit_const =
      fit_pinball_qr(tr2.x, v, BasisSpec::intercept_only(), level, 0.0, std::nullopt, solver);
  PinballModel over = fit_good;
  for (auto& k : over.kappa) k *= config.over_scale;
  PinballModel under = fit_good;
  for (auto& k : under.kappa) k *= config.under_scale;

  std::vector<PredictorSpec> out;
  const std::pair<const char*, const PinballModel*> models[] = {
      {"good", &fit_good}, {"const", &fit_const}, {"over", &over}, {"under", &under}};
  for (const auto& [name, model] : models) {
    PredictorSpec p;
    p.name = name;
    p.score.kind = ScoreKind::cqr_one_sided;
    p.score.base.kind = BaseKind::residual;
    p.score.base.mean = mean;
    p.score.quantile = std::make_shared<PinballModel>(*model);
    out.push_back(std::move(p));
  }
  return out;
}

SelectionMetrics run_selection_experiment(const SelectionExperimentConfig& config) {
  config.validate();
  const Level level(config.alpha);
  const Rng master(config.dgp.seed);
  const auto& rules = all_selection_rules();
  SelectionMetrics out;
  out.reports.resize(config.reps);
  parallel_for(config.reps, config.jobs, [&](std::size_t rep) {
    try {
      Rng rep_rng = master.child(rep);
      Rng data_rng = rep_rng.child(0);
      const DgpDraw draw = generate_dgp(config.dgp, data_rng);
      CandidatePool pool(rigged_selection_pool(config, draw.train), draw.calib, level);
      SelectionOptions opts;
      opts.targets = config.targets;
      opts.bandwidth_covariates = draw.train.x;
      opts.reference_n = static_cast<double>(config.dgp.n);
      Rng select_rng = rep_rng.child(1);
      out.reports[rep] = select(pool, SelectionRule::avg_loss, select_rng, opts);
    } catch (const Error& e) {
      throw RepetitionError(rep, e.what());
    }
  });
  out.labels = out.reports.front().labels;
  std::size_t good = 0;
  while (good < out.labels.size() && out.labels[good] != "good") ++good;
  out.chosen.assign(rules.size(), std::vector<std::size_t>(config.reps, 0));
  out.good_rate.assign(rules.size(), 0.0);
  for (std::size_t r = 0; r < rules.size(); ++r) {
    for (std::size_t rep = 0; rep < config.reps; ++rep) {
      const std::size_t c = out.reports[rep].chosen_by_rule.at(to_string(rules[r]));
      out.chosen[r][rep] = c;
      out.good_rate[r] += c == good;
    }
    out.good_rate[r] /= static_cast<double>(config.reps);
  }
  return out;
}

}  // namespace ckit
