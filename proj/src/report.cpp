#include "conformal_kit/report.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "conformal_kit/errors.hpp"
#include "conformal_kit/version.hpp"

namespace ckit {

namespace {

template <class T>
void read(const Json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

Json number(double v) {
  if (std::isfinite(v)) return v;
  return v > 0 ? "inf" : (v < 0 ? "-inf" : "nan");
}

}  // namespace

void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

Json to_json(const DgpSpec& s) {
  return {{"dgp", s.dgp},     {"d", s.d},         {"sigma_x", s.sigma_x},
          {"n", s.n},         {"n_tr", s.n_tr},   {"n_te", s.n_te},
          {"seed", s.seed},   {"dgp1_noise", to_string(s.dgp1_noise)}};
}

void apply_json(const Json& j, DgpSpec& s) {
  check_keys(j, {"dgp", "d", "sigma_x", "n", "n_tr", "n_te", "seed", "dgp1_noise"}, "dgp");
  read(j, "dgp", s.dgp);
  read(j, "d", s.d);
  read(j, "sigma_x", s.sigma_x);
  read(j, "n", s.n);
  read(j, "n_tr", s.n_tr);
  read(j, "n_te", s.n_te);
  read(j, "seed", s.seed);
  std::string noise = to_string(s.dgp1_noise);
  read(j, "dgp1_noise", noise);
  s.dgp1_noise = dgp1_noise_from_string(noise);
}

Json to_json(const ExperimentConfig& c) {
  return {{"dgp", to_json(c.dgp)},
          {"alpha", c.alpha},
          {"reps", c.reps},
          {"methods", c.methods},
          {"kernel", to_string(c.kernel)},
          {"bandwidth",
           {{"rule", to_string(c.bandwidth.rule)},
            {"target_neff", c.bandwidth.target_neff},
            {"fixed", c.bandwidth.fixed},
            {"rate_constant", c.bandwidth.rate_constant}}},
          {"cqr_lambda", c.cqr_lambda},
          {"lcp_self", c.lcp_self == LcpSelf::include ? "include" : "exclude"},
          {"resolution", c.resolution},
          {"resample_test", c.resample_test}};
}

void apply_json(const Json& j, ExperimentConfig& c) {
  check_keys(j,
             {"dgp", "alpha", "reps", "methods", "kernel", "bandwidth", "cqr_lambda", "lcp_self",
              "resolution", "jobs", "resample_test"},
             "experiment config");
  if (j.contains("dgp")) apply_json(j.at("dgp"), c.dgp);
  read(j, "alpha", c.alpha);
  read(j, "reps", c.reps);
  read(j, "methods", c.methods);
  std::string kernel = to_string(c.kernel);
  read(j, "kernel", kernel);
  c.kernel = kernel_family_from_string(kernel);
  if (j.contains("bandwidth")) {
    const Json& b = j.at("bandwidth");
    check_keys(b, {"rule", "target_neff", "fixed", "rate_constant"}, "bandwidth");
    std::string rule = to_string(c.bandwidth.rule);
    read(b, "rule", rule);
    c.bandwidth.rule = bandwidth_rule_from_string(rule);
    read(b, "target_neff", c.bandwidth.target_neff);
    read(b, "fixed", c.bandwidth.fixed);
    read(b, "rate_constant", c.bandwidth.rate_constant);
  }
  read(j, "cqr_lambda", c.cqr_lambda);
  std::string self = c.lcp_self == LcpSelf::include ? "include" : "exclude";
  read(j, "lcp_self", self);
  if (self != "include" && self != "exclude") throw ConfigError("lcp_self must be include|exclude");
  c.lcp_self = self == "include" ? LcpSelf::include : LcpSelf::exclude;
  read(j, "resolution", c.resolution);
  read(j, "jobs", c.jobs);
  read(j, "resample_test", c.resample_test);
}

Json to_json(const SbmSpec& s) {
  return {{"blocks", s.blocks}, {"p_in", s.p_in}, {"p_out", s.p_out},
          {"noise", s.noise},   {"d", s.d},       {"seed", s.seed}};
}

void apply_json(const Json& j, SbmSpec& s) {
  check_keys(j, {"blocks", "p_in", "p_out", "noise", "d", "seed"}, "sbm");
  read(j, "blocks", s.blocks);
  read(j, "p_in", s.p_in);
  read(j, "p_out", s.p_out);
  read(j, "noise", s.noise);
  read(j, "d", s.d);
  read(j, "seed", s.seed);
}

Json to_json(const GraphExperimentConfig& c) {
  return {{"sbm", to_json(c.sbm)},
          {"alpha", c.alpha},
          {"reps", c.reps},
          {"tests_per_block", c.tests_per_block},
          {"train_size", c.train_size},
          {"detect", c.detect},
          {"min_community_size", c.detection.min_community_size},
          {"max_sweeps", c.detection.max_sweeps},
          {"mode", c.mode == GraphMode::fast ? "fast" : "exact"},
          {"resolution", c.resolution}};
}

void apply_json(const Json& j, GraphExperimentConfig& c) {
  check_keys(j,
             {"sbm", "alpha", "reps", "tests_per_block", "train_size", "detect",
              "min_community_size", "max_sweeps", "mode", "resolution", "jobs"},
             "graph config");
  if (j.contains("sbm")) apply_json(j.at("sbm"), c.sbm);
  read(j, "alpha", c.alpha);
  read(j, "reps", c.reps);
  read(j, "tests_per_block", c.tests_per_block);
  read(j, "train_size", c.train_size);
  read(j, "detect", c.detect);
  read(j, "min_community_size", c.detection.min_community_size);
  read(j, "max_sweeps", c.detection.max_sweeps);
  std::string mode = c.mode == GraphMode::fast ? "fast" : "exact";
  read(j, "mode", mode);
  if (mode != "fast" && mode != "exact") throw ConfigError("graph mode must be fast|exact");
  c.mode = mode == "fast" ? GraphMode::fast : GraphMode::exact;
  read(j, "resolution", c.resolution);
  read(j, "jobs", c.jobs);
}

Json to_json(const HierSpec& s) {
  return {{"branches", s.branches}, {"per_branch", s.per_branch}, {"d", s.d},
          {"tau_low", s.tau_low},   {"tau_high", s.tau_high},     {"slope", s.slope},
          {"seed", s.seed}};
}

void apply_json(const Json& j, HierSpec& s) {
  check_keys(j, {"branches", "per_branch", "d", "tau_low", "tau_high", "slope", "seed"}, "hier");
  read(j, "branches", s.branches);
  read(j, "per_branch", s.per_branch);
  read(j, "d", s.d);
  read(j, "tau_low", s.tau_low);
  read(j, "tau_high", s.tau_high);
  read(j, "slope", s.slope);
  read(j, "seed", s.seed);
}

Json to_json(const SelectionExperimentConfig& c) {
  return {{"dgp", to_json(c.dgp)},         {"alpha", c.alpha},
          {"reps", c.reps},                {"targets", c.targets},
          {"over_scale", c.over_scale},    {"under_scale", c.under_scale}};
}

void apply_json(const Json& j, SelectionExperimentConfig& c) {
  check_keys(j, {"dgp", "alpha", "reps", "targets", "over_scale", "under_scale", "jobs"},
             "select config");
  if (j.contains("dgp")) apply_json(j.at("dgp"), c.dgp);
  read(j, "alpha", c.alpha);
  read(j, "reps", c.reps);
  read(j, "targets", c.targets);
  read(j, "over_scale", c.over_scale);
  read(j, "under_scale", c.under_scale);
  read(j, "jobs", c.jobs);
}

namespace {

const char* mode_name(HierMode m) {
  return m == HierMode::held_out ? "held_out" : "trial_inclusive";
}

}  // namespace

Json to_json(const HierExperimentConfig& c) {
  return {{"hier", to_json(c.hier)},
          {"kind", to_string(c.kind)},
          {"kernel", to_string(c.options.kernel.family)},
          {"bandwidth", c.options.kernel.bandwidth},
          {"calibration", c.options.calibration == HierCalibration::pooled ? "pooled" : "own_branch"},
          {"mode", mode_name(c.options.mode)},
          {"scoring",
           c.options.scoring == HierScoring::in_sample ? "in_sample" : "leave_one_out"},
          {"alpha", c.alpha},
          {"reps", c.reps},
          {"test_points", c.test_points},
          {"resolution", c.resolution},
          {"tau_bins", c.tau_bins},
          {"x_cuts", c.x_cuts}};
}

void apply_json(const Json& j, HierExperimentConfig& c) {
  check_keys(j,
             {"hier", "kind", "kernel", "bandwidth", "calibration", "mode", "scoring", "alpha",
              "reps", "test_points", "resolution", "tau_bins", "x_cuts", "jobs"},
             "hier config");
  if (j.contains("hier")) apply_json(j.at("hier"), c.hier);
  std::string kind = to_string(c.kind);
  read(j, "kind", kind);
  c.kind = branch_score_kind_from_string(kind);
  std::string kernel = to_string(c.options.kernel.family);
  read(j, "kernel", kernel);
  double h = c.options.kernel.bandwidth;
  read(j, "bandwidth", h);
  try {
    c.options.kernel = KernelSpec(kernel_family_from_string(kernel), h);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  std::string cal = c.options.calibration == HierCalibration::pooled ? "pooled" : "own_branch";
  read(j, "calibration", cal);
  if (cal != "pooled" && cal != "own_branch") throw ConfigError("calibration must be pooled|own_branch");
  c.options.calibration = cal == "pooled" ? HierCalibration::pooled : HierCalibration::own_branch;
  std::string mode = mode_name(c.options.mode);
  read(j, "mode", mode);
  if (mode != "held_out" && mode != "trial_inclusive") {
    throw ConfigError("mode must be held_out|trial_inclusive");
  }
  c.options.mode = mode == "held_out" ? HierMode::held_out : HierMode::trial_inclusive;
  std::string scoring = c.options.scoring == HierScoring::in_sample ? "in_sample" : "leave_one_out";
  read(j, "scoring", scoring);
  if (scoring != "in_sample" && scoring != "leave_one_out") {
    throw ConfigError("scoring must be in_sample|leave_one_out");
  }
  c.options.scoring =
      scoring == "in_sample" ? HierScoring::in_sample : HierScoring::leave_one_out;
  read(j, "alpha", c.alpha);
  read(j, "reps", c.reps);
  read(j, "test_points", c.test_points);
  read(j, "resolution", c.resolution);
  read(j, "tau_bins", c.tau_bins);
  read(j, "x_cuts", c.x_cuts);
  read(j, "jobs", c.jobs);
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string metrics_csv(const MetricsTable& t) {
  std::ostringstream out;
  out << "method,reps,marginal,marginal_se,cond_miscov,mean_length\n";
  for (const auto& s : t.summary) {
    std::size_t reps = 0;
    for (const auto& r : t.rows) reps += r.method == s.method;
    out << s.method << ',' << reps << ',' << format_double(s.marginal) << ','
        << format_double(s.marginal_se) << ',' << format_double(s.cond_miscov) << ','
        << format_double(s.mean_length) << '\n';
  }
  return out.str();
}

std::string reps_csv(const MetricsTable& t) {
  std::ostringstream out;
  out << "method,rep,marginal,cond_miscov,mean_length,bandwidth\n";
  for (const auto& r : t.rows) {
    out << r.method << ',' << r.rep << ',' << format_double(r.marginal) << ','
        << format_double(r.cond_miscov) << ',' << format_double(r.mean_length) << ','
        << format_double(r.bandwidth) << '\n';
  }
  return out.str();
}

Json metrics_json(const MetricsTable& t) {
  Json methods = Json::array();
  for (const auto& s : t.summary) {
    methods.push_back({{"method", s.method},
                       {"marginal", number(s.marginal)},
                       {"marginal_se", number(s.marginal_se)},
                       {"cond_miscov", number(s.cond_miscov)},
                       {"mean_length", number(s.mean_length)}});
  }
  Json bw = Json::array();
  for (const auto& r : t.rows) {
    if (r.method == t.rows.front().method) bw.push_back(number(r.bandwidth));
  }
  return {{"methods", methods}, {"bandwidths", bw}};
}

std::string graph_csv(const GraphMetrics& m) {
  std::ostringstream out;
  out << "community,method,evaluations,coverage,miscoverage,mean_length\n";
  for (std::size_t b = 0; b < m.evaluations.size(); ++b) {
    out << b << ",graphcp," << m.evaluations[b] << ',' << format_double(m.graphcp_coverage[b]) << ','
        << format_double(1.0 - m.graphcp_coverage[b]) << ',' << format_double(m.graphcp_length[b])
        << '\n';
    out << b << ",stdcp," << m.evaluations[b] << ',' << format_double(m.stdcp_coverage[b]) << ','
        << format_double(1.0 - m.stdcp_coverage[b]) << ',' << format_double(m.stdcp_length[b])
        << '\n';
  }
  return out.str();
}

Json graph_json(const GraphMetrics& m) {
  Json comms = Json::array();
  for (std::size_t b = 0; b < m.evaluations.size(); ++b) {
    comms.push_back({{"community", b},
                     {"evaluations", m.evaluations[b]},
                     {"graphcp_coverage", number(m.graphcp_coverage[b])},
                     {"stdcp_coverage", number(m.stdcp_coverage[b])},
                     {"graphcp_length", number(m.graphcp_length[b])},
                     {"stdcp_length", number(m.stdcp_length[b])}});
  }
  return {{"communities", comms},
          {"max_threshold_gap", m.max_threshold_gap},
          {"max_scaled_threshold_gap", m.max_scaled_threshold_gap},
          {"rank_grid_exact", m.rank_grid_exact},
          {"mean_misclustering", m.mean_misclustering}};
}

std::string hier_csv(const HierMetrics& m) {
  std::ostringstream out;
  out << "rep,tau,x0,coverage,length\n";
  for (const auto& r : m.records) {
    out << r.rep << ',' << format_double(r.tau) << ',' << format_double(r.x0) << ','
        << format_double(r.coverage) << ',' << format_double(r.length) << '\n';
  }
  return out.str();
}

Json hier_json(const HierMetrics& m) {
  Json cells = Json::array();
  for (std::size_t b = 0; b < m.bin_coverage.size(); ++b) {
    cells.push_back({{"tau_bin", b / m.x_bins},
                     {"x_bin", b % m.x_bins},
                     {"count", m.bin_counts[b]},
                     {"coverage", number(m.bin_coverage[b])}});
  }
  return {{"marginal", m.marginal},
          {"marginal_se", m.marginal_se},
          {"cond_miscov", m.cond_miscov},
          {"mean_length", number(m.mean_length)},
          {"cells", cells}};
}

Json selection_json(const SelectionReport& r) {
  Json cands = Json::array();
  for (std::size_t k = 0; k < r.labels.size(); ++k) {
    Json losses = Json::array();
    for (std::size_t b = 0; b < r.bandwidths.size(); ++b) losses.push_back(number(r.losses[k][b]));
    cands.push_back({{"label", r.labels[k]},
                     {"losses", losses},
                     {"mean_loss", number(r.mean_loss[k])},
                     {"mean_rank", r.mean_rank[k]},
                     {"mean_length",
                      k < r.mean_length.size() ? number(r.mean_length[k]) : Json(nullptr)}});
  }
  Json chosen = Json::object();
  for (const auto& [rule, k] : r.chosen_by_rule) chosen[rule] = r.labels[k];
  return {{"targets", r.targets},
          {"bandwidths", r.bandwidths},
          {"candidates", cands},
          {"chosen_by_rule", chosen},
          {"rule", to_string(r.rule)},
          {"chosen", r.chosen_label()}};
}

std::string selection_csv(const SelectionMetrics& m) {
  std::ostringstream out;
  out << "rep,rule,chosen";
  for (const auto& l : m.labels) out << ",loss_" << l;
  out << '\n';
  const auto& rules = all_selection_rules();
  for (std::size_t rep = 0; rep < m.reports.size(); ++rep) {
    for (std::size_t r = 0; r < rules.size(); ++r) {
      out << rep << ',' << to_string(rules[r]) << ',' << m.labels[m.chosen[r][rep]];
      for (double l : m.reports[rep].mean_loss) out << ',' << format_double(l);
      out << '\n';
    }
  }
  return out.str();
}

Json selection_json(const SelectionMetrics& m) {
  Json rates = Json::object();
  const auto& rules = all_selection_rules();
  for (std::size_t r = 0; r < rules.size(); ++r) rates[to_string(rules[r])] = m.good_rate[r];
  Json out = {{"candidates", m.labels}, {"good_rate", rates}};
  if (!m.reports.empty()) out["first_rep"] = selection_json(m.reports.front());
  return out;
}

Json summary_document(const std::string& command, const Json& config, const Json& results,
                      KernelFamily family) {
  return {{"command", command},
          {"version", kVersion},
          {"kernel_family", to_string(family)},
          {"config", config},
          {"results", results}};
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex_digest(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace ckit
