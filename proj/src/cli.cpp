#include "conformal_kit/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "conformal_kit/errors.hpp"
#include "conformal_kit/experiment.hpp"
#include "conformal_kit/log.hpp"
#include "conformal_kit/report.hpp"
#include "conformal_kit/version.hpp"

namespace ckit {

namespace {

struct Common {
  std::string config_path;
  std::string out = "conformal_kit";
  std::optional<std::size_t> jobs;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "JSON config file")->check(CLI::ExistingFile);
  sub->add_option("--out", c.out, "Output prefix for <prefix>_metrics.csv and <prefix>_summary.json");
  sub->add_option("--jobs", c.jobs, "Worker threads")->check(CLI::PositiveNumber);
  sub->add_option("--seed", c.seed, "Master seed (fallback: CONFORMAL_KIT_SEED)");
  sub->add_flag("--quiet", c.quiet, "Suppress warnings");
}

Json load_config(const std::string& path) {
  if (path.empty()) return Json::object();
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  try {
    Json j = Json::parse(in);
    if (!j.is_object()) throw ConfigError("config root must be an object");
    return j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("malformed config " + path + ": " + e.what());
  }
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("CONFORMAL_KIT_SEED");
  if (s == nullptr || *s == '\0') return std::nullopt;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (end == s || *end != '\0') throw ConfigError("CONFORMAL_KIT_SEED must be an unsigned integer");
  return v;
}

bool config_has_seed(const Json& j, const char* section) {
  auto it = j.find(section);
  return it != j.end() && it->is_object() && it->contains("seed");
}

// Flag, then config, then environment.
void resolve_seed(const Common& c, const Json& j, const char* section, std::uint64_t& seed) {
  if (c.seed) {
    seed = *c.seed;
  } else if (!config_has_seed(j, section)) {
    if (auto e = env_seed()) seed = *e;
  }
}

// Level and kernel constructors report bad values as DomainError.
template <class F>
void as_config(F&& f) {
  try {
    f();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

class Outputs {
 public:
  explicit Outputs(const std::string& prefix)
      : metrics_path_(prefix + "_metrics.csv"), summary_path_(prefix + "_summary.json") {
    metrics_.open(metrics_path_, std::ios::binary | std::ios::trunc);
    summary_.open(summary_path_, std::ios::binary | std::ios::trunc);
    if (!metrics_ || !summary_) throw Error("cannot write output prefix " + prefix);
  }

  std::string write(const std::string& csv, const Json& summary) {
    const std::string doc = summary.dump(2) + "\n";
    metrics_ << csv;
    summary_ << doc;
    metrics_.close();
    summary_.close();
    if (!metrics_ || !summary_) throw Error("failed writing outputs");
    return hex_digest(fnv1a(csv + doc));
  }

  const std::string& metrics_path() const { return metrics_path_; }

 private:
  std::string metrics_path_;
  std::string summary_path_;
  std::ofstream metrics_;
  std::ofstream summary_;
};

std::string fmt(double v, int digits = 4) {
  if (!std::isfinite(v)) return format_double(v);
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

// Flags shared by the coverage-style subcommands.
struct CoverageFlags {
  std::optional<int> dgp;
  std::optional<std::size_t> n, d, n_tr, n_te, reps;
  std::optional<double> sigma, alpha, target_neff, bandwidth, rate_constant;
  std::optional<std::string> methods, kernel, bandwidth_rule, dgp1_noise, lcp_self;
  std::optional<int> resolution;
  bool resample_test = false;
};

void add_coverage_flags(CLI::App* sub, CoverageFlags& f) {
  sub->add_option("--dgp", f.dgp, "Data-generating process (1, 2 or 3)");
  sub->add_option("--n", f.n, "Calibration size");
  sub->add_option("--d", f.d, "Covariate dimension");
  sub->add_option("--n-tr", f.n_tr, "Training size");
  sub->add_option("--n-te", f.n_te, "Number of test covariates");
  sub->add_option("--sigma", f.sigma, "Test covariate scale");
  sub->add_option("--alpha", f.alpha, "Miscoverage level");
  sub->add_option("--reps", f.reps, "Repetitions");
  sub->add_option("--methods", f.methods, "Comma-separated method list");
  sub->add_option("--kernel", f.kernel, "gaussian or boxcar");
  sub->add_option("--bandwidth-rule", f.bandwidth_rule, "neff, fixed or rate");
  sub->add_option("--target-neff", f.target_neff, "Target effective sample size");
  sub->add_option("--bandwidth", f.bandwidth, "Fixed bandwidth");
  sub->add_option("--rate-constant", f.rate_constant, "c in h = c n^(-1/(d+2))");
  sub->add_option("--dgp1-noise", f.dgp1_noise, "sum_abs or abs_sum");
  sub->add_option("--lcp-self", f.lcp_self, "include or exclude");
  sub->add_option("--resolution", f.resolution, "Grid resolution");
  sub->add_flag("--resample-test", f.resample_test, "Fresh test covariates in every repetition");
}

void apply_flags(const CoverageFlags& f, ExperimentConfig& c) {
  if (f.dgp) c.dgp.dgp = *f.dgp;
  if (f.n) c.dgp.n = *f.n;
  if (f.d) c.dgp.d = *f.d;
  if (f.n_tr) c.dgp.n_tr = *f.n_tr;
  if (f.n_te) c.dgp.n_te = *f.n_te;
  if (f.sigma) c.dgp.sigma_x = *f.sigma;
  if (f.alpha) c.alpha = *f.alpha;
  if (f.reps) c.reps = *f.reps;
  if (f.methods) c.methods = split_list(*f.methods);
  if (f.kernel) c.kernel = kernel_family_from_string(*f.kernel);
  if (f.bandwidth_rule) c.bandwidth.rule = bandwidth_rule_from_string(*f.bandwidth_rule);
  if (f.target_neff) c.bandwidth.target_neff = *f.target_neff;
  if (f.bandwidth) {
    c.bandwidth.fixed = *f.bandwidth;
    if (!f.bandwidth_rule) c.bandwidth.rule = BandwidthRule::fixed;
  }
  if (f.rate_constant) c.bandwidth.rate_constant = *f.rate_constant;
  if (f.dgp1_noise) c.dgp.dgp1_noise = dgp1_noise_from_string(*f.dgp1_noise);
  if (f.lcp_self) {
    if (*f.lcp_self != "include" && *f.lcp_self != "exclude") {
      throw ConfigError("--lcp-self must be include or exclude");
    }
    c.lcp_self = *f.lcp_self == "include" ? LcpSelf::include : LcpSelf::exclude;
  }
  if (f.resolution) c.resolution = *f.resolution;
  if (f.resample_test) c.resample_test = true;
}

ExperimentConfig coverage_config(const Common& common, const CoverageFlags& flags,
                                 ExperimentConfig base) {
  const Json j = load_config(common.config_path);
  apply_json(j, base);
  apply_flags(flags, base);
  resolve_seed(common, j, "dgp", base.dgp.seed);
  if (common.jobs) base.jobs = *common.jobs;
  as_config([&] { base.validate(); });
  return base;
}

std::string coverage_line(const MetricsTable& t) {
  std::string line;
  for (const auto& s : t.summary) {
    if (!line.empty()) line += " | ";
    line += s.method + " marginal=" + fmt(s.marginal) + " cond_miscov=" + fmt(s.cond_miscov) +
            " length=" + fmt(s.mean_length);
  }
  return line;
}

Json reps_json(const MetricsTable& t) {
  Json rows = Json::array();
  for (const auto& r : t.rows) {
    rows.push_back({{"method", r.method},
                    {"rep", r.rep},
                    {"marginal", r.marginal},
                    {"cond_miscov", r.cond_miscov},
                    {"mean_length", std::isfinite(r.mean_length) ? Json(r.mean_length) : Json("inf")},
                    {"bandwidth", r.bandwidth}});
  }
  return rows;
}

std::string run_coverage(const std::string& command, const ExperimentConfig& config,
                         const Common& common, std::ostream& out) {
  Outputs outputs(common.out);
  const MetricsTable table = run_coverage_experiment(config);
  Json results = metrics_json(table);
  results["reps"] = reps_json(table);
  const std::string digest = outputs.write(
      metrics_csv(table), summary_document(command, to_json(config), results, config.kernel));
  out << command << ": " << coverage_line(table) << " [" << digest << "]\n";
  return digest;
}

// pvalue: one fresh test pair per repetition and method.
void run_pvalue(const ExperimentConfig& config, PValueConvention convention, const Common& common,
                std::ostream& out) {
  Outputs outputs(common.out);
  const PValueTable table = run_pvalue_experiment(config, convention);
  const std::size_t nm = config.methods.size();
  const auto& p = table.p;

  std::ostringstream csv;
  csv << "method,reps,rejection_rate,rejection_se,mean_p\n";
  Json methods = Json::array();
  std::string line;
  const double reps = static_cast<double>(config.reps);
  for (std::size_t m = 0; m < nm; ++m) {
    double rej = 0.0;
    double mean = 0.0;
    for (double v : p[m]) {
      rej += v <= config.alpha;
      mean += v;
    }
    rej /= reps;
    mean /= reps;
    const double se = std::sqrt(rej * (1.0 - rej) / reps);
    csv << config.methods[m] << ',' << config.reps << ',' << format_double(rej) << ','
        << format_double(se) << ',' << format_double(mean) << '\n';
    methods.push_back({{"method", config.methods[m]},
                       {"rejection_rate", rej},
                       {"rejection_se", se},
                       {"mean_p", mean},
                       {"p_values", p[m]}});
    if (!line.empty()) line += " | ";
    line += config.methods[m] + " Pr(p<=alpha)=" + fmt(rej);
  }
  Json cfg = to_json(config);
  cfg["convention"] = convention == PValueConvention::dual ? "dual" : "strict";
  const std::string digest = outputs.write(
      csv.str(), summary_document("pvalue", cfg, {{"methods", methods}}, config.kernel));
  out << "pvalue: " << line << " [" << digest << "]\n";
}

// decompose: the intrinsic conditional-quantile mismatch at test covariates.
void run_decompose(const ExperimentConfig& config, std::size_t monte_carlo, const Common& common,
                   std::ostream& out) {
  Outputs outputs(common.out);
  const DgpSpec& spec = config.dgp;
  const Level level(config.alpha);
  const Rng master(spec.seed);
  Rng test_rng = master.child(0);
  Rng train_rng = master.child(1);
  const Matrix test_x = sample_covariates(spec.n_te, spec.d, spec.sigma_x, test_rng);
  const Dataset train =
      sample_responses(spec, sample_covariates(spec.n_tr, spec.d, 1.0, train_rng), train_rng);
  const RepetitionFit fit = fit_repetition(config, train);
  const CovariateFn ratio = density_ratio(spec);

  std::ostringstream csv;
  csv << "method,points,mean_gap,max_gap\n";
  Json methods = Json::array();
  std::string line;
  for (const auto& name : config.methods) {
    const PredictorSpec ps = make_predictor(name, fit.components, fit.kernel,
                                            is_shift_method(name) ? ratio : CovariateFn{});
    std::vector<double> gaps(spec.n_te, 0.0);
    bool supported = true;
    try {
      GapOptions opts;
      opts.monte_carlo = monte_carlo;
      opts.seed = spec.seed + 1;
      parallel_for(spec.n_te, config.jobs, [&](std::size_t i) {
        gaps[i] = oracle_conditional_quantile_gap(ps, spec, row_span(test_x, static_cast<Eigen::Index>(i)),
                                                  level, opts);
      });
    } catch (const UnsupportedError& e) {
      supported = false;
      warn(name + ": " + e.what());
    }
    if (!line.empty()) line += " | ";
    if (!supported) {
      csv << name << ",0,nan,nan\n";
      methods.push_back({{"method", name}, {"supported", false}});
      line += name + " unsupported";
      continue;
    }
    double mean = 0.0;
    double top = 0.0;
    for (double g : gaps) {
      mean += g;
      top = std::max(top, g);
    }
    mean /= static_cast<double>(gaps.size());
    csv << name << ',' << gaps.size() << ',' << format_double(mean) << ',' << format_double(top)
        << '\n';
    methods.push_back({{"method", name}, {"supported", true}, {"mean_gap", mean}, {"max_gap", top},
                       {"gaps", gaps}});
    line += name + " mean_gap=" + fmt(mean);
  }
  Json cfg = to_json(config);
  cfg["monte_carlo"] = monte_carlo;
  const std::string digest = outputs.write(
      csv.str(), summary_document("decompose", cfg, {{"methods", methods}}, config.kernel));
  out << "decompose: " << line << " [" << digest << "]\n";
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

double parse_number(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str()) throw ConfigError("non-numeric value '" + s + "' in " + where);
  return v;
}

bool is_header(const std::vector<std::string>& row) {
  for (const auto& c : row) {
    char* end = nullptr;
    std::strtod(c.c_str(), &end);
    if (end == c.c_str()) return true;
  }
  return false;
}

// Node CSV: covariate columns then the response; an optional header row.
Dataset read_nodes(const std::string& path) {
  auto rows = read_csv(path);
  if (!rows.empty() && is_header(rows.front())) rows.erase(rows.begin());
  if (rows.empty()) throw ConfigError(path + " has no rows");
  const std::size_t cols = rows.front().size();
  if (cols < 2) throw ConfigError(path + " needs at least one covariate and a response");
  Dataset d;
  d.x.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols - 1));
  d.y.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != cols) throw ConfigError(path + ": ragged row " + std::to_string(i + 1));
    for (std::size_t k = 0; k + 1 < cols; ++k) {
      d.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = parse_number(rows[i][k], path);
    }
    d.y[i] = parse_number(rows[i][cols - 1], path);
  }
  return d;
}

std::vector<std::pair<std::size_t, std::size_t>> read_edges(const std::string& path,
                                                            std::size_t nodes) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::stringstream ss(line);
    std::string a, b;
    if (!(ss >> a) || a[0] == '#') continue;
    if (!(ss >> b)) throw ConfigError(path + ":" + std::to_string(lineno) + ": expected two node ids");
    try {
      const std::size_t u = std::stoul(a);
      const std::size_t v = std::stoul(b);
      if (u >= nodes || v >= nodes) {
        throw ConfigError(path + ":" + std::to_string(lineno) + ": node id out of range");
      }
      edges.emplace_back(u, v);
    } catch (const std::logic_error&) {
      if (lineno == 1) continue;
      throw ConfigError(path + ":" + std::to_string(lineno) + ": bad node id");
    }
  }
  return edges;
}

CommunityAssignment read_labels(const std::string& path, std::size_t nodes) {
  auto rows = read_csv(path);
  if (!rows.empty() && is_header(rows.front())) rows.erase(rows.begin());
  if (rows.size() != nodes) throw ConfigError(path + ": expected one label per node");
  std::vector<std::size_t> raw(nodes);
  for (std::size_t i = 0; i < nodes; ++i) {
    raw[i] = static_cast<std::size_t>(parse_number(rows[i].back(), path));
  }
  return CommunityAssignment::from_labels(raw);
}

struct GraphFileFlags {
  std::string edges, nodes, labels, train;
  std::optional<std::size_t> test;
};

void run_graph_files(const GraphFileFlags& f, const GraphExperimentConfig& config,
                     const Common& common, std::ostream& out) {
  if (f.nodes.empty()) throw ConfigError("--edges needs --nodes");
  if (!f.test) throw ConfigError("--edges needs --test");
  Dataset nodes = read_nodes(f.nodes);
  const std::size_t n = nodes.size();
  if (*f.test >= n) throw ConfigError("--test is out of range");
  const auto edges = read_edges(f.edges, n);
  GraphData g = GraphData::from_edges(n, edges, nodes.x, nodes.y, *f.test);
  g.validate();
  const Level level(config.alpha);
  Outputs outputs(common.out);

  BaseScore base;
  if (!f.train.empty()) {
    const Dataset train = read_nodes(f.train);
    if (train.dim() != nodes.dim()) throw ConfigError("training covariate dimension differs");
    base.kind = BaseKind::residual;
    base.mean = std::make_shared<LinearMean>(LinearMean::fit(train.x, train.y));
  } else {
    base.kind = BaseKind::response;
  }
  CommunityAssignment assignment;
  if (!f.labels.empty()) {
    assignment = read_labels(f.labels, n);
  } else {
    Rng rng(config.sbm.seed);
    assignment = detect_communities(g, rng, config.detection);
  }
  std::vector<double> observed;
  for (std::size_t u = 0; u < n; ++u) {
    if (u != g.test) observed.push_back(base.eval(g.row(u), g.y[u]));
  }
  Interval dom = default_y_domain(observed);
  const double c = base.center(g.row(g.test));
  dom = {dom.lo + c, dom.hi + c};
  if (base.kind == BaseKind::residual) {
    const double top = std::max(std::fabs(dom.lo - c), std::fabs(dom.hi - c));
    dom = {c - top, c + top};
  }
  const auto grid = make_grid(dom, config.resolution);
  const PredictionRegion region = graphcp_region(g, assignment, base, level, grid, config.mode);
  const GraphCalibration cal = graphcp_calibration(g, assignment, base, level);

  std::ostringstream csv;
  csv << "community,size,contains_test\n";
  const auto sizes = assignment.sizes();
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    csv << k << ',' << sizes[k] << ',' << (assignment.labels[g.test] == k ? 1 : 0) << '\n';
  }
  Json intervals = Json::array();
  for (const auto& iv : region.intervals()) intervals.push_back({iv.lo, iv.hi});
  Json cfg = to_json(config);
  cfg["edges"] = f.edges;
  cfg["nodes"] = f.nodes;
  cfg["labels"] = f.labels;
  cfg["train"] = f.train;
  cfg["test"] = *f.test;
  const Json results = {{"communities", assignment.count},
                        {"source", assignment.source == CommunitySource::detected ? "detected"
                                                                                   : "imported"},
                        {"threshold", cal.threshold},
                        {"region", intervals},
                        {"length", region.length()}};
  const std::string digest =
      outputs.write(csv.str(), summary_document("graph", cfg, results, KernelFamily::gaussian));
  out << "graph: communities=" << assignment.count << " length=" << fmt(region.length())
      << " intervals=" << region.intervals().size() << " [" << digest << "]\n";
}

int dispatch(CLI::App& app, const std::vector<std::string>& args, std::ostream& out,
             std::ostream& err) {
  Common common;
  CoverageFlags cov;

  auto* simulate = app.add_subcommand("simulate", "Coverage experiment on a synthetic DGP");
  auto* shift = app.add_subcommand("shift", "Covariate-shift comparison (weighted vs unweighted)");
  auto* pvalue = app.add_subcommand("pvalue", "Conformal p-values on fresh test pairs");
  auto* decompose = app.add_subcommand("decompose", "Intrinsic conditional-quantile mismatch");
  auto* selectc = app.add_subcommand("select", "Model selection on a four-candidate pool");
  auto* graph = app.add_subcommand("graph", "Community-conditional calibration on graphs");
  auto* hier = app.add_subcommand("hier", "Hierarchical calibration experiment");
  for (auto* s : {simulate, shift, pvalue, decompose, selectc, graph, hier}) add_common(s, common);
  for (auto* s : {simulate, shift, pvalue, decompose}) add_coverage_flags(s, cov);

  std::string convention = "dual";
  pvalue->add_option("--convention", convention, "dual or strict")
      ->check(CLI::IsMember({"dual", "strict"}));
  std::size_t monte_carlo = 20000;
  decompose->add_option("--monte-carlo", monte_carlo, "Monte Carlo draws for the mixture law")
      ->check(CLI::PositiveNumber);

  std::optional<std::size_t> sel_reps;
  std::optional<double> sel_alpha;
  std::optional<std::string> sel_targets;
  selectc->add_option("--reps", sel_reps, "Repetitions");
  selectc->add_option("--alpha", sel_alpha, "Miscoverage level");
  selectc->add_option("--targets", sel_targets, "Comma-separated n_eff targets");

  std::optional<std::size_t> g_reps, g_tests;
  std::optional<double> g_alpha;
  std::optional<std::string> g_mode;
  bool g_detect = false;
  GraphFileFlags gf;
  graph->add_option("--reps", g_reps, "Repetitions");
  graph->add_option("--alpha", g_alpha, "Miscoverage level");
  graph->add_option("--tests-per-block", g_tests, "Test nodes per block");
  graph->add_option("--mode", g_mode, "fast or exact")->check(CLI::IsMember({"fast", "exact"}));
  graph->add_flag("--detect", g_detect, "Use detected rather than planted communities");
  graph->add_option("--edges", gf.edges, "Edge list file (switches to file input)");
  graph->add_option("--nodes", gf.nodes, "Node CSV: covariates then response");
  graph->add_option("--labels", gf.labels, "Community label CSV (default: detect)");
  graph->add_option("--train", gf.train, "Training CSV for a residual base score");
  graph->add_option("--test", gf.test, "Test node index");

  std::optional<std::size_t> h_reps, h_k, h_n;
  std::optional<double> h_alpha, h_bw;
  std::optional<std::string> h_kind, h_mode;
  hier->add_option("--reps", h_reps, "Repetitions");
  hier->add_option("--branches", h_k, "Number of branches K");
  hier->add_option("--per-branch", h_n, "Observations per branch N");
  hier->add_option("--alpha", h_alpha, "Miscoverage level");
  hier->add_option("--bandwidth", h_bw, "Kernel bandwidth");
  hier->add_option("--kind", h_kind, "dcp_branch or cqr_branch");
  hier->add_option("--mode", h_mode, "held_out or trial_inclusive");

  app.require_subcommand(1, 1);
  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }
  set_warnings_enabled(!common.quiet);

  if (app.got_subcommand(simulate)) {
    run_coverage("simulate", coverage_config(common, cov, ExperimentConfig{}), common, out);
  } else if (app.got_subcommand(shift)) {
    ExperimentConfig base;
    base.dgp.dgp1_noise = Dgp1Noise::abs_sum;
    base.dgp.sigma_x = 1.2;
    base.methods = {"cqr", "cqr_shift", "wcp"};
    base.lcp_self = LcpSelf::exclude;
    run_coverage("shift", coverage_config(common, cov, base), common, out);
  } else if (app.got_subcommand(pvalue)) {
    ExperimentConfig base;
    base.reps = 1000;
    base.dgp.n = 200;
    base.dgp.n_tr = 400;
    base.dgp.d = 1;
    base.dgp.sigma_x = 1.0;
    base.bandwidth.target_neff = 30.0;
    run_pvalue(coverage_config(common, cov, base),
               convention == "dual" ? PValueConvention::dual : PValueConvention::strict, common,
               out);
  } else if (app.got_subcommand(decompose)) {
    ExperimentConfig base;
    base.dgp.n_te = 50;
    base.methods = {"scp", "wcp", "cqr", "dcp"};
    run_decompose(coverage_config(common, cov, base), monte_carlo, common, out);
  } else if (app.got_subcommand(selectc)) {
    SelectionExperimentConfig config;
    const Json j = load_config(common.config_path);
    apply_json(j, config);
    if (sel_reps) config.reps = *sel_reps;
    if (sel_alpha) config.alpha = *sel_alpha;
    if (sel_targets) {
      config.targets.clear();
      for (const auto& t : split_list(*sel_targets)) config.targets.push_back(parse_number(t, "--targets"));
    }
    resolve_seed(common, j, "dgp", config.dgp.seed);
    if (common.jobs) config.jobs = *common.jobs;
    as_config([&] { config.validate(); });
    Outputs outputs(common.out);
    const SelectionMetrics m = run_selection_experiment(config);
    const std::string digest = outputs.write(
        selection_csv(m), summary_document("select", to_json(config), selection_json(m),
                                           KernelFamily::gaussian));
    std::string line;
    const auto& rules = all_selection_rules();
    for (std::size_t r = 0; r < rules.size(); ++r) {
      if (!line.empty()) line += " ";
      line += to_string(rules[r]) + "=" + fmt(m.good_rate[r], 2);
    }
    out << "select: good-candidate rate " << line << " [" << digest << "]\n";
  } else if (app.got_subcommand(graph)) {
    GraphExperimentConfig config;
    const Json j = load_config(common.config_path);
    apply_json(j, config);
    if (g_reps) config.reps = *g_reps;
    if (g_alpha) config.alpha = *g_alpha;
    if (g_tests) config.tests_per_block = *g_tests;
    if (g_mode) config.mode = *g_mode == "fast" ? GraphMode::fast : GraphMode::exact;
    if (g_detect) config.detect = true;
    resolve_seed(common, j, "sbm", config.sbm.seed);
    if (common.jobs) config.jobs = *common.jobs;
    if (!gf.edges.empty()) {
      as_config([&] { Level{config.alpha}; });
      run_graph_files(gf, config, common, out);
      return 0;
    }
    as_config([&] { config.validate(); });
    Outputs outputs(common.out);
    const GraphMetrics m = run_graph_experiment(config);
    const std::string digest = outputs.write(
        graph_csv(m),
        summary_document("graph", to_json(config), graph_json(m), KernelFamily::gaussian));
    std::string line;
    for (std::size_t b = 0; b < m.evaluations.size(); ++b) {
      if (!line.empty()) line += " ";
      line += "c" + std::to_string(b) + "=" + fmt(m.graphcp_coverage[b], 3) + "/" +
              fmt(m.stdcp_coverage[b], 3);
    }
    out << "graph: coverage graphcp/stdcp " << line << " [" << digest << "]\n";
  } else if (app.got_subcommand(hier)) {
    HierExperimentConfig config;
    config.options.mode = HierMode::trial_inclusive;
    const Json j = load_config(common.config_path);
    apply_json(j, config);
    if (h_reps) config.reps = *h_reps;
    if (h_k) config.hier.branches = *h_k;
    if (h_n) config.hier.per_branch = *h_n;
    if (h_alpha) config.alpha = *h_alpha;
    if (h_bw) as_config([&] { config.options.kernel = KernelSpec(config.options.kernel.family, *h_bw); });
    if (h_kind) config.kind = branch_score_kind_from_string(*h_kind);
    if (h_mode) {
      if (*h_mode != "held_out" && *h_mode != "trial_inclusive") {
        throw ConfigError("--mode must be held_out or trial_inclusive");
      }
      config.options.mode = *h_mode == "held_out" ? HierMode::held_out : HierMode::trial_inclusive;
    }
    resolve_seed(common, j, "hier", config.hier.seed);
    if (common.jobs) config.jobs = *common.jobs;
    as_config([&] { config.validate(); });
    Outputs outputs(common.out);
    const HierMetrics m = run_hier_experiment(config);
    const std::string digest = outputs.write(
        hier_csv(m),
        summary_document("hier", to_json(config), hier_json(m), config.options.kernel.family));
    out << "hier: marginal=" << fmt(m.marginal) << " se=" << fmt(m.marginal_se)
        << " cond_miscov=" << fmt(m.cond_miscov) << " length=" << fmt(m.mean_length) << " ["
        << digest << "]\n";
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Conditional conformal prediction toolkit", "conformal-kit"};
  app.set_version_flag("--version", kVersion);
  try {
    return dispatch(app, args, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace ckit
