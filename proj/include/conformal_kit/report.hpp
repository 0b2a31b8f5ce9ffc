#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "conformal_kit/experiment.hpp"
#include "conformal_kit/selection.hpp"

namespace ckit {

using Json = nlohmann::ordered_json;

// Config (de)serialization. Unknown keys and wrong types raise ConfigError. `jobs` is
// read but not written, so reports do not depend on the thread count.
Json to_json(const DgpSpec& spec);
Json to_json(const ExperimentConfig& config);
Json to_json(const SbmSpec& spec);
Json to_json(const GraphExperimentConfig& config);
Json to_json(const HierSpec& spec);
Json to_json(const HierExperimentConfig& config);
Json to_json(const SelectionExperimentConfig& config);

void apply_json(const Json& j, DgpSpec& spec);
void apply_json(const Json& j, ExperimentConfig& config);
void apply_json(const Json& j, SbmSpec& spec);
void apply_json(const Json& j, GraphExperimentConfig& config);
void apply_json(const Json& j, HierSpec& spec);
void apply_json(const Json& j, HierExperimentConfig& config);
void apply_json(const Json& j, SelectionExperimentConfig& config);

// Rejects keys outside `allowed`.
void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where);

// One row per method: method, reps, marginal, marginal_se, cond_miscov, mean_length.
std::string metrics_csv(const MetricsTable& table);
// One row per (method, rep): method, rep, marginal, cond_miscov, mean_length, bandwidth.
std::string reps_csv(const MetricsTable& table);
Json metrics_json(const MetricsTable& table);

std::string graph_csv(const GraphMetrics& metrics);
Json graph_json(const GraphMetrics& metrics);

std::string hier_csv(const HierMetrics& metrics);
Json hier_json(const HierMetrics& metrics);

Json selection_json(const SelectionReport& report);
// One row per (rep, rule): rep, rule, chosen, then the mean loss of every candidate.
std::string selection_csv(const SelectionMetrics& metrics);
Json selection_json(const SelectionMetrics& metrics);

// {"version", "kernel_family", "config", "results"}.
Json summary_document(const std::string& command, const Json& config, const Json& results,
                      KernelFamily family);

std::string format_double(double v);
std::uint64_t fnv1a(const std::string& bytes);
std::string hex_digest(std::uint64_t h);

}  // namespace ckit
