#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "conformal_kit/dgp.hpp"
#include "conformal_kit/graph.hpp"
#include "conformal_kit/hier.hpp"
#include "conformal_kit/kernels.hpp"
#include "conformal_kit/methods.hpp"
#include "conformal_kit/selection.hpp"

namespace ckit {

// Runs fn(0..count-1) on up to `jobs` threads; the first exception is rethrown.
void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& fn);

enum class BandwidthRule { neff, fixed, rate };

std::string to_string(BandwidthRule r);
BandwidthRule bandwidth_rule_from_string(const std::string& name);

struct BandwidthConfig {
  BandwidthRule rule = BandwidthRule::neff;
  double target_neff = 40.0;
  double fixed = 1.0;
  // h = rate_constant * n^(-1/(d+2)).
  double rate_constant = 1.0;
};

struct ExperimentConfig {
  DgpSpec dgp;
  double alpha = 0.1;
  std::size_t reps = 50;
  std::vector<std::string> methods{"scp", "cqr"};
  KernelFamily kernel = KernelFamily::gaussian;
  BandwidthConfig bandwidth;
  double cqr_lambda = 0.01;
  LcpSelf lcp_self = LcpSelf::include;
  int resolution = 512;
  std::size_t jobs = 1;
  // Keep per-test-point coverages in the table.
  bool keep_coverage = false;
  // Draw fresh test covariates in every repetition instead of one shared test set.
  bool resample_test = false;

  void validate() const;
};

struct RepMetrics {
  std::string method;
  std::size_t rep = 0;
  double marginal = 0.0;
  double cond_miscov = 0.0;
  double mean_length = 0.0;
  double bandwidth = 0.0;
};

struct MethodSummary {
  std::string method;
  double marginal = 0.0;
  // Standard error of the marginal coverage across repetitions.
  double marginal_se = 0.0;
  double cond_miscov = 0.0;
  double mean_length = 0.0;
};

struct MetricsTable {
  std::vector<RepMetrics> rows;
  std::vector<MethodSummary> summary;
  // coverage[m][rep][i] when keep_coverage is set.
  std::vector<std::vector<std::vector<double>>> coverage;

  const MethodSummary& method(const std::string& name) const;
};

// Summary over a (rep x test point) coverage matrix.
MethodSummary summarize_coverage(const std::string& method,
                                 const std::vector<std::vector<double>>& coverage,
                                 const std::vector<double>& lengths, double target);

struct RepetitionFit {
  FittedComponents components;
  std::optional<KernelSpec> kernel;
};

// Fits the mean on the first half of train and the rest on the second half.
RepetitionFit fit_repetition(const ExperimentConfig& config, const Dataset& train);

std::vector<GroupIndicator> default_batchgcp_groups(std::size_t d);

MetricsTable run_coverage_experiment(const ExperimentConfig& config);

// One fresh test pair per repetition; p[m][rep] for each configured method.
struct PValueTable {
  std::vector<std::string> methods;
  std::vector<std::vector<double>> p;
  // Fraction of repetitions with p <= alpha.
  std::vector<double> rejection;
};

PValueTable run_pvalue_experiment(const ExperimentConfig& config,
                                  PValueConvention convention = PValueConvention::dual);

struct SbmSpec {
  std::vector<std::size_t> blocks{120, 120, 120};
  double p_in = 0.3;
  double p_out = 0.005;
  std::vector<double> noise{1.0, 1.0, 1.0};
  std::size_t d = 1;
  std::uint64_t seed = 0;

  std::size_t nodes() const;
  void validate() const;
};

struct SbmDraw {
  GraphData graph;
  CommunityAssignment planted;
};

// Node model: X ~ N(0, I_d), Y = 2 sum(x)/d + noise[block] * eps. The last node is the test.
double sbm_mean(std::span<const double> x);
SbmDraw generate_sbm_graph(const SbmSpec& spec, Rng& rng);
Dataset sample_sbm_training(const SbmSpec& spec, std::size_t n, Rng& rng);

struct GraphExperimentConfig {
  SbmSpec sbm{{500, 500, 500}, 0.05, 0.002, {0.5, 1.0, 2.0}, 1, 0};
  double alpha = 0.1;
  std::size_t reps = 200;
  std::size_t tests_per_block = 20;
  std::size_t train_size = 500;
  bool detect = false;
  DetectionOptions detection;
  GraphMode mode = GraphMode::fast;
  int resolution = 2001;
  std::size_t jobs = 1;

  void validate() const;
};

struct GraphMetrics {
  std::vector<double> graphcp_coverage;
  std::vector<double> stdcp_coverage;
  std::vector<double> graphcp_length;
  std::vector<double> stdcp_length;
  std::vector<std::size_t> evaluations;
  // max over draws of |q - (1 - alpha)| and of m_min * |q - (1 - alpha)|.
  double max_threshold_gap = 0.0;
  double max_scaled_threshold_gap = 0.0;
  bool rank_grid_exact = true;
  double mean_misclustering = 0.0;
};

GraphMetrics run_graph_experiment(const GraphExperimentConfig& config);

struct HierSpec {
  std::size_t branches = 50;
  std::size_t per_branch = 20;
  std::size_t d = 1;
  double tau_low = 0.5;
  double tau_high = 2.0;
  double slope = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct HierDraw {
  HierData data;
  std::vector<double> tau;
};

// Branch k: X ~ N(0, I_d), Y = slope * sum(x)/d + tau_k * eps, tau_k ~ U[tau_low, tau_high].
double hier_mean(const HierSpec& spec, std::span<const double> x);
HierDraw generate_hierarchical(const HierSpec& spec, Rng& rng);

struct HierExperimentConfig {
  HierSpec hier;
  BranchScoreKind kind = BranchScoreKind::dcp_branch;
  HierOptions options;
  double alpha = 0.1;
  std::size_t reps = 300;
  std::size_t test_points = 5;
  int resolution = 2048;
  std::vector<double> tau_bins{0.5, 1.0, 1.5, 2.0};
  // Interior cut points on the first test coordinate.
  std::vector<double> x_cuts{-1.0, 1.0};
  std::size_t jobs = 1;

  void validate() const;
};

struct HierRecord {
  std::size_t rep = 0;
  double tau = 0.0;
  double x0 = 0.0;
  double coverage = 0.0;
  double length = 0.0;
};

struct HierMetrics {
  std::vector<HierRecord> records;
  double marginal = 0.0;
  double marginal_se = 0.0;
  double mean_length = 0.0;
  // Joint (tau bin, x bin) cells, tau-major.
  std::vector<double> bin_coverage;
  std::vector<std::size_t> bin_counts;
  std::size_t x_bins = 1;
  // Mean |coverage - (1 - alpha)| over records.
  double cond_miscov = 0.0;
};

HierMetrics run_hier_experiment(const HierExperimentConfig& config);

// Four one-sided CQR candidates on a shared mean: "good" (basis 1, sqrt(mean |x|)),
// "const" (intercept only), "over" and "under" (good coefficients scaled).
struct SelectionExperimentConfig {
  DgpSpec dgp{3, 1, 1.0, 500, 1000, 500, 0, Dgp1Noise::sum_abs};
  double alpha = 0.1;
  std::size_t reps = 50;
  std::vector<double> targets{30.0, 40.0, 50.0};
  double over_scale = 2.0;
  double under_scale = 0.5;
  std::size_t jobs = 1;

  void validate() const;
};

std::vector<PredictorSpec> rigged_selection_pool(const SelectionExperimentConfig& config,
                                                 const Dataset& train);

struct SelectionMetrics {
  std::vector<std::string> labels;
  std::vector<SelectionReport> reports;
  // chosen[rule][rep] as a candidate index, rules in all_selection_rules() order.
  std::vector<std::vector<std::size_t>> chosen;
  // Fraction of reps on which each rule chose "good".
  std::vector<double> good_rate;
};

SelectionMetrics run_selection_experiment(const SelectionExperimentConfig& config);

}  // namespace ckit
