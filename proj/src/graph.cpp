#include "conformal_kit/graph.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "conformal_kit/errors.hpp"
#include "conformal_kit/log.hpp"

namespace ckit {

std::size_t GraphData::num_edges() const {
  std::size_t m = 0;
  for (const auto& nb : adjacency) m += nb.size();
  return m / 2;
}

void GraphData::validate() const {
  const std::size_t n = adjacency.size();
  if (n == 0) throw DomainError("graph has no nodes");
  if (static_cast<std::size_t>(x.rows()) != n || y.size() != n) {
    throw DimensionError("graph covariates/responses do not match the node count");
  }
  if (test >= n) throw DomainError("test node index out of range");
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v : adjacency[u]) {
      if (v >= n) throw DomainError("edge endpoint out of range");
      if (v == u) throw DomainError("adjacency must have a zero diagonal");
      if (!std::binary_search(adjacency[v].begin(), adjacency[v].end(), u)) {
        throw DomainError("adjacency must be symmetric");
      }
    }
  }
}

GraphData GraphData::from_edges(std::size_t nodes,
                                const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                                Matrix x, std::vector<double> y, std::size_t test) {
  GraphData g;
  g.adjacency.assign(nodes, {});
  for (auto [u, v] : edges) {
    if (u >= nodes || v >= nodes) throw DomainError("edge endpoint out of range");
    if (u == v) continue;
    g.adjacency[u].push_back(v);
    g.adjacency[v].push_back(u);
  }
  for (auto& nb : g.adjacency) {
    std::sort(nb.begin(), nb.end());
    nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
  }
  g.x = std::move(x);
  g.y = std::move(y);
  g.test = test;
  g.validate();
  return g;
}

std::vector<std::size_t> CommunityAssignment::sizes() const {
  std::vector<std::size_t> s(count, 0);
  for (auto l : labels) ++s[l];
  return s;
}

void CommunityAssignment::validate(std::size_t nodes) const {
  if (labels.size() != nodes) throw DimensionError("community labels do not match the node count");
  std::vector<bool> seen(count, false);
  for (auto l : labels) {
    if (l >= count) throw DomainError("community id out of range");
    seen[l] = true;
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw DomainError("every community must be nonempty");
  }
}

CommunityAssignment CommunityAssignment::from_labels(const std::vector<std::size_t>& raw,
                                                     CommunitySource source) {
  CommunityAssignment a;
  a.source = source;
  std::map<std::size_t, std::size_t> remap;
  a.labels.reserve(raw.size());
  for (auto r : raw) {
    auto it = remap.find(r);
    if (it == remap.end()) it = remap.emplace(r, remap.size()).first;
    a.labels.push_back(it->second);
  }
  a.count = remap.size();
  return a;
}

CommunityAssignment CommunityAssignment::single(std::size_t nodes) {
  return from_labels(std::vector<std::size_t>(nodes, 0));
}

CommunityAssignment detect_communities(const GraphData& graph, Rng& rng,
                                       const DetectionOptions& opts) {
  const std::size_t n = graph.num_nodes();
  if (graph.num_edges() == 0) {
    warn("edgeless graph; every node is its own community and all are merged");
  }
  std::vector<std::size_t> labels(n);
  std::iota(labels.begin(), labels.end(), std::size_t{0});
  std::vector<std::size_t> next(n);
  std::vector<std::size_t> count(n, 0);
  std::vector<std::size_t> touched;
  std::vector<std::size_t> best;
  for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    bool changed = false;
    for (std::size_t u = 0; u < n; ++u) {
      touched.clear();
      auto bump = [&](std::size_t l) {
        if (count[l]++ == 0) touched.push_back(l);
      };
      bump(labels[u]);
      for (auto v : graph.adjacency[u]) bump(labels[v]);
      std::size_t top = 0;
      for (auto l : touched) top = std::max(top, count[l]);
      best.clear();
      for (auto l : touched) {
        if (count[l] == top) best.push_back(l);
      }
      std::sort(best.begin(), best.end());
      if (std::find(best.begin(), best.end(), labels[u]) != best.end() && best.size() > 1 &&
          sweep > 0) {
        next[u] = labels[u];
      } else {
        next[u] = best.size() == 1 ? best[0] : best[rng.below(best.size())];
      }
      for (auto l : touched) count[l] = 0;
      if (next[u] != labels[u]) changed = true;
    }
    labels.swap(next);
    if (!changed) break;
  }
  CommunityAssignment a = CommunityAssignment::from_labels(labels, CommunitySource::detected);
  const auto sizes = a.sizes();
  std::vector<std::size_t> merged(n);
  const std::size_t outlier = n;
  for (std::size_t u = 0; u < n; ++u) {
    merged[u] = sizes[a.labels[u]] < opts.min_community_size ? outlier : a.labels[u];
  }
  return CommunityAssignment::from_labels(merged, CommunitySource::detected);
}

double misclustering_rate(const CommunityAssignment& detected, const CommunityAssignment& planted) {
  if (detected.labels.size() != planted.labels.size()) {
    throw DimensionError("assignments differ in length");
  }
  const std::size_t n = detected.labels.size();
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> table;
  for (std::size_t u = 0; u < n; ++u) ++table[{detected.labels[u], planted.labels[u]}];
  // Greedy maximum matching on the contingency table, largest cells first.
  std::vector<std::pair<std::size_t, std::pair<std::size_t, std::size_t>>> cells;
  for (const auto& [key, c] : table) cells.push_back({c, key});
  std::sort(cells.begin(), cells.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<bool> used_d(detected.count, false);
  std::vector<bool> used_p(planted.count, false);
  std::size_t matched = 0;
  for (const auto& [c, key] : cells) {
    if (used_d[key.first] || used_p[key.second]) continue;
    used_d[key.first] = true;
    used_p[key.second] = true;
    matched += c;
  }
  return 1.0 - static_cast<double>(matched) / static_cast<double>(n);
}

double community_rank_score(std::span<const double> base, const CommunityAssignment& assignment,
                            std::size_t i) {
  if (i >= base.size()) throw DomainError("node index out of range");
  if (assignment.labels.size() != base.size()) {
    throw DimensionError("base scores do not match the assignment");
  }
  const std::size_t c = assignment.labels[i];
  std::size_t below = 0;
  std::size_t size = 0;
  for (std::size_t j = 0; j < base.size(); ++j) {
    if (assignment.labels[j] != c) continue;
    ++size;
    if (base[j] <= base[i]) ++below;
  }
  return static_cast<double>(below) / static_cast<double>(size);
}

namespace {

// Ranks of the nodes in `members` among themselves, written into out.
void rank_within(std::span<const double> base, const std::vector<std::size_t>& members,
                 std::vector<double>& out) {
  std::vector<double> v;
  v.reserve(members.size());
  for (auto j : members) v.push_back(base[j]);
  std::sort(v.begin(), v.end());
  const double m = static_cast<double>(members.size());
  for (auto j : members) {
    const auto below = std::upper_bound(v.begin(), v.end(), base[j]) - v.begin();
    out[j] = static_cast<double>(below) / m;
  }
}

}  // namespace

std::vector<double> community_rank_scores(std::span<const double> base,
                                          const CommunityAssignment& assignment) {
  if (assignment.labels.size() != base.size()) {
    throw DimensionError("base scores do not match the assignment");
  }
  std::vector<std::vector<std::size_t>> members(assignment.count);
  for (std::size_t j = 0; j < base.size(); ++j) members[assignment.labels[j]].push_back(j);
  std::vector<double> out(base.size(), 0.0);
  for (const auto& m : members) rank_within(base, m, out);
  return out;
}

namespace {

struct GraphState {
  std::vector<double> base;
  std::vector<std::vector<std::size_t>> observed_members;
  std::vector<double> ranks;
  std::size_t test_comm = 0;
  std::size_t test_comm_size = 0;
  std::vector<double> test_sorted;
};

GraphState prepare(const GraphData& graph, const CommunityAssignment& assignment,
                   const BaseScore& base) {
  graph.validate();
  assignment.validate(graph.num_nodes());
  const std::size_t n = graph.num_nodes();
  if (n < 2) throw DomainError("graph needs at least one observed node");
  GraphState st;
  st.base.assign(n, 0.0);
  st.observed_members.assign(assignment.count, {});
  for (std::size_t j = 0; j < n; ++j) {
    if (j == graph.test) continue;
    st.base[j] = base.eval(graph.row(j), graph.y[j]);
    st.observed_members[assignment.labels[j]].push_back(j);
  }
  st.ranks.assign(n, 0.0);
  for (const auto& m : st.observed_members) {
    if (!m.empty()) rank_within(st.base, m, st.ranks);
  }
  st.test_comm = assignment.labels[graph.test];
  st.test_comm_size = st.observed_members[st.test_comm].size() + 1;
  for (auto j : st.observed_members[st.test_comm]) st.test_sorted.push_back(st.base[j]);
  std::sort(st.test_sorted.begin(), st.test_sorted.end());
  return st;
}

double pooled_threshold(const std::vector<double>& ranks, std::size_t test, Level level) {
  std::vector<double> s;
  s.reserve(ranks.size());
  for (std::size_t j = 0; j < ranks.size(); ++j) {
    if (j != test) s.push_back(ranks[j]);
  }
  WeightedScoreSample sample{s, std::vector<double>(s.size(), 1.0), 1.0};
  return weighted_quantile(sample, level);
}

}  // namespace

GraphCalibration graphcp_calibration(const GraphData& graph, const CommunityAssignment& assignment,
                                     const BaseScore& base, Level level) {
  const GraphState st = prepare(graph, assignment, base);
  GraphCalibration cal;
  cal.ranks = st.ranks;
  cal.threshold = pooled_threshold(st.ranks, graph.test, level);
  return cal;
}

PredictionRegion graphcp_region(const GraphData& graph, const CommunityAssignment& assignment,
                                const BaseScore& base, Level level, std::span<const double> y_grid,
                                GraphMode mode) {
  if (y_grid.size() < 8) throw ConfigError("grid resolution must be at least 8");
  GraphState st = prepare(graph, assignment, base);
  const double m = static_cast<double>(st.test_comm_size);
  const auto xt = graph.row(graph.test);
  std::vector<bool> mask(y_grid.size(), false);
  if (mode == GraphMode::fast) {
    const double q = pooled_threshold(st.ranks, graph.test, level);
    for (std::size_t g = 0; g < y_grid.size(); ++g) {
      const double vt = base.eval(xt, y_grid[g]);
      const auto below =
          std::upper_bound(st.test_sorted.begin(), st.test_sorted.end(), vt) - st.test_sorted.begin();
      mask[g] = (1.0 + static_cast<double>(below)) / m <= q;
    }
    return PredictionRegion::from_grid_mask(y_grid, mask);
  }
  const auto& members = st.observed_members[st.test_comm];
  std::vector<double> ranks = st.ranks;
  for (std::size_t g = 0; g < y_grid.size(); ++g) {
    const double vt = base.eval(xt, y_grid[g]);
    for (auto j : members) {
      const auto below = std::upper_bound(st.test_sorted.begin(), st.test_sorted.end(), st.base[j]) -
                         st.test_sorted.begin();
      ranks[j] = (static_cast<double>(below) + (vt <= st.base[j] ? 1.0 : 0.0)) / m;
    }
    const auto below =
        std::upper_bound(st.test_sorted.begin(), st.test_sorted.end(), vt) - st.test_sorted.begin();
    const double test_rank = (1.0 + static_cast<double>(below)) / m;
    mask[g] = test_rank <= pooled_threshold(ranks, graph.test, level);
  }
  return PredictionRegion::from_grid_mask(y_grid, mask);
}

}  // namespace ckit
