#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "conformal_kit/core.hpp"
#include "conformal_kit/linalg.hpp"
#include "conformal_kit/methods.hpp"
#include "conformal_kit/rng.hpp"

namespace ckit {

struct GraphData {
  std::vector<std::vector<std::size_t>> adjacency;
  Matrix x;
  // Responses for all nodes; the entry at `test` is never read.
  std::vector<double> y;
  std::size_t test = 0;

  std::size_t num_nodes() const { return adjacency.size(); }
  std::size_t num_edges() const;
  std::span<const double> row(std::size_t i) const {
    return row_span(x, static_cast<Eigen::Index>(i));
  }
  void validate() const;

  static GraphData from_edges(std::size_t nodes,
                              const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                              Matrix x, std::vector<double> y, std::size_t test);
};

enum class CommunitySource { detected, imported };

struct CommunityAssignment {
  std::vector<std::size_t> labels;
  std::size_t count = 0;
  CommunitySource source = CommunitySource::imported;

  std::vector<std::size_t> sizes() const;
  void validate(std::size_t nodes) const;

  // Compacts arbitrary ids to 0..K-1 in order of first appearance.
  static CommunityAssignment from_labels(const std::vector<std::size_t>& raw,
                                         CommunitySource source = CommunitySource::imported);
  static CommunityAssignment single(std::size_t nodes);
};

struct DetectionOptions {
  int max_sweeps = 100;
  std::size_t min_community_size = 10;
};

CommunityAssignment detect_communities(const GraphData& graph, Rng& rng,
                                       const DetectionOptions& opts = {});

// Fraction of nodes misassigned under the best matching of detected to planted labels.
double misclustering_rate(const CommunityAssignment& detected, const CommunityAssignment& planted);

double community_rank_score(std::span<const double> base, const CommunityAssignment& assignment,
                            std::size_t i);
std::vector<double> community_rank_scores(std::span<const double> base,
                                          const CommunityAssignment& assignment);

enum class GraphMode { fast, exact };

// Fast-mode ranks of the observed nodes and the pooled threshold q.
struct GraphCalibration {
  std::vector<double> ranks;
  double threshold = 0.0;
};

GraphCalibration graphcp_calibration(const GraphData& graph, const CommunityAssignment& assignment,
                                     const BaseScore& base, Level level);

PredictionRegion graphcp_region(const GraphData& graph, const CommunityAssignment& assignment,
                                const BaseScore& base, Level level, std::span<const double> y_grid,
                                GraphMode mode = GraphMode::fast);

}  // namespace ckit
