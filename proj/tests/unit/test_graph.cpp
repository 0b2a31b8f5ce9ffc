#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "conformal_kit/errors.hpp"
#include "conformal_kit/experiment.hpp"
#include "conformal_kit/graph.hpp"
#include "conformal_kit/log.hpp"
#include "support.hpp"

using namespace ckit;

namespace {

GraphData two_cliques(std::size_t m) {
  std::vector<std::pair<std::size_t, std::size_t>> e;
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = i + 1; j < m; ++j) e.emplace_back(c * m + i, c * m + j);
    }
  }
  Matrix x = Matrix::Zero(static_cast<Eigen::Index>(2 * m), 1);
  std::vector<double> y(2 * m);
  for (std::size_t i = 0; i < 2 * m; ++i) y[i] = static_cast<double>(i);
  return GraphData::from_edges(2 * m, e, x, y, 2 * m - 1);
}

BaseScore response_score() {
  BaseScore b;
  b.kind = BaseKind::response;
  return b;
}

}  // namespace

TEST_SUITE("graph") {

TEST_CASE("two disconnected cliques give two communities") {
  const GraphData g = two_cliques(12);
  Rng rng(1);
  const auto c = detect_communities(g, rng);
  CHECK(c.count == 2);
  CHECK(c.source == CommunitySource::detected);
  for (std::size_t i = 1; i < 12; ++i) CHECK(c.labels[i] == c.labels[0]);
  CHECK(c.labels[12] != c.labels[0]);
}

TEST_CASE("edgeless graph merges into one outlier community with a warning") {
  const GraphData g = GraphData::from_edges(5, {}, Matrix::Zero(5, 1), std::vector<double>(5, 0.0), 4);
  Rng rng(2);
  const std::size_t before = warning_count();
  set_warnings_enabled(false);
  const auto c = detect_communities(g, rng);
  set_warnings_enabled(true);
  CHECK(c.count == 1);
  CHECK(warning_count() > before);
}

TEST_CASE("planted SBM is recovered") {
  SbmSpec spec;
  spec.seed = 3;
  for (std::uint64_t s = 0; s < 3; ++s) {
    Rng rng(100 + s);
    const SbmDraw draw = generate_sbm_graph(spec, rng);
    Rng drng(s);
    const auto c = detect_communities(draw.graph, drng);
    CHECK(misclustering_rate(c, draw.planted) < 0.05);
  }
}

TEST_CASE("without community structure recovery is near chance") {
  SbmSpec spec;
  spec.p_in = spec.p_out = 0.02;
  Rng rng(4);
  const SbmDraw draw = generate_sbm_graph(spec, rng);
  Rng drng(5);
  set_warnings_enabled(false);
  const auto c = detect_communities(draw.graph, drng);
  set_warnings_enabled(true);
  // Chance for three balanced blocks is 2/3 misassigned.
  CHECK(misclustering_rate(c, draw.planted) > 0.4);
}

TEST_CASE("property: detection is permutation equivariant up to relabeling") {
  SbmSpec spec;
  Rng rng(6);
  const SbmDraw draw = generate_sbm_graph(spec, rng);
  const std::size_t n = draw.graph.num_nodes();
  Rng prng(7);
  const auto perm = testing::gen_permutation(prng, n);
  std::vector<std::size_t> inv(n);
  for (std::size_t i = 0; i < n; ++i) inv[perm[i]] = i;
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t u = 0; u < n; ++u) {
    for (auto v : draw.graph.adjacency[u]) {
      if (u < v) edges.emplace_back(inv[u], inv[v]);
    }
  }
  const GraphData pg = GraphData::from_edges(n, edges, draw.graph.x, draw.graph.y, 0);
  Rng d1(8), d2(8);
  const auto a = detect_communities(draw.graph, d1);
  const auto b = detect_communities(pg, d2);
  std::vector<std::size_t> b_back(n);
  for (std::size_t i = 0; i < n; ++i) b_back[perm[i]] = b.labels[i];
  CHECK(misclustering_rate(CommunityAssignment::from_labels(b_back), a) < 0.02);
}

TEST_CASE("within-community rank scores") {
  const std::vector<double> base{2.0, 1.0, 3.0};
  const auto one = CommunityAssignment::single(3);
  const auto r = community_rank_scores(base, one);
  CHECK(r[0] == doctest::Approx(2.0 / 3.0));
  CHECK(r[1] == doctest::Approx(1.0 / 3.0));
  CHECK(r[2] == doctest::Approx(1.0));

  const std::vector<double> b2{5.0, 0.5, 9.0, 1.0, 4.0};
  const auto two = CommunityAssignment::from_labels({7, 7, 3, 3, 7});
  CHECK(community_rank_score(b2, two, 1) == doctest::Approx(1.0 / 3.0));
  CHECK(community_rank_score(b2, two, 0) == doctest::Approx(1.0));
  CHECK(community_rank_score(b2, two, 3) == doctest::Approx(0.5));

  // Relabeling the ids leaves every rank unchanged.
  const auto relabeled = CommunityAssignment::from_labels({1, 1, 0, 0, 1});
  CHECK(community_rank_scores(b2, relabeled) == community_rank_scores(b2, two));
}

TEST_CASE("single community reproduces split conformal on the grid") {
  Rng rng(9);
  const std::size_t n = 60;
  std::vector<std::pair<std::size_t, std::size_t>> e;
  for (std::size_t i = 0; i + 1 < n; ++i) e.emplace_back(i, i + 1);
  std::vector<double> y(n);
  for (auto& v : y) v = rng.normal();
  const GraphData g = GraphData::from_edges(n, e, Matrix::Zero(static_cast<Eigen::Index>(n), 1), y, n - 1);
  const auto one = CommunityAssignment::single(n);
  const auto grid = make_grid({-4, 4}, 801);
  for (GraphMode mode : {GraphMode::fast, GraphMode::exact}) {
    const PredictionRegion r = graphcp_region(g, one, response_score(), Level(0.1), grid, mode);
    WeightedScoreSample s{std::vector<double>(y.begin(), y.end() - 1), std::vector<double>(n - 1, 1.0), 1.0};
    // The rank score is monotone in y, so SCP on the response itself is its reduction.
    const double q = weighted_quantile(s, Level(0.1));
    for (double v : grid) CHECK(r.contains(v) == (v <= q));
  }
}

TEST_CASE("median rank at alpha one half") {
  const std::size_t m = 41;
  std::vector<std::pair<std::size_t, std::size_t>> e;
  for (std::size_t i = 0; i + 1 < m; ++i) e.emplace_back(i, i + 1);
  std::vector<double> y(m);
  for (std::size_t i = 0; i < m; ++i) y[i] = static_cast<double>((i * 17) % m);
  const GraphData g = GraphData::from_edges(m, e, Matrix::Zero(static_cast<Eigen::Index>(m), 1), y, m - 1);
  const auto cal = graphcp_calibration(g, CommunityAssignment::single(m), response_score(), Level(0.5));
  CHECK(std::fabs(cal.threshold - 0.5) <= 1.0 / (m - 1) + 1e-12);
}

TEST_CASE("property: rank grid and threshold proximity on SBM draws") {
  SbmSpec spec;
  spec.noise = {0.5, 1.0, 2.0};
  for (std::uint64_t s = 0; s < 5; ++s) {
    Rng rng(20 + s);
    SbmDraw draw = generate_sbm_graph(spec, rng);
    const auto cal = graphcp_calibration(draw.graph, draw.planted, response_score(), Level(0.1));
    const auto sizes = draw.planted.sizes();
    const double m_min = static_cast<double>(*std::min_element(sizes.begin(), sizes.end()));
    CHECK(std::fabs(cal.threshold - 0.9) <= 2.0 / m_min);
    std::vector<std::vector<double>> by(draw.planted.count);
    for (std::size_t u = 0; u < draw.graph.num_nodes(); ++u) {
      if (u != draw.graph.test) by[draw.planted.labels[u]].push_back(cal.ranks[u]);
    }
    for (auto& r : by) {
      std::sort(r.begin(), r.end());
      for (std::size_t k = 0; k < r.size(); ++k) CHECK(r[k] == static_cast<double>(k + 1) / r.size());
    }
  }
}

TEST_CASE("SBM generator") {
  SbmSpec spec;
  spec.blocks = {30, 40};
  spec.noise = {1.0, 1.0};
  spec.p_in = 0.4;
  spec.p_out = 0.0;
  Rng rng(30);
  const SbmDraw draw = generate_sbm_graph(spec, rng);
  for (std::size_t u = 0; u < draw.graph.num_nodes(); ++u) {
    for (auto v : draw.graph.adjacency[u]) CHECK(draw.planted.labels[u] == draw.planted.labels[v]);
  }

  SbmSpec s2;
  s2.blocks = {50, 70, 30};
  s2.p_in = 0.2;
  s2.p_out = 0.03;
  const double within = 50.0 * 49 / 2 + 70.0 * 69 / 2 + 30.0 * 29 / 2;
  const double between = 50.0 * 70 + 50.0 * 30 + 70.0 * 30;
  const double mean = within * 0.2 + between * 0.03;
  const double var = within * 0.2 * 0.8 + between * 0.03 * 0.97;
  const int seeds = 40;
  double total = 0.0;
  for (int s = 0; s < seeds; ++s) {
    Rng r(1000 + s);
    total += static_cast<double>(generate_sbm_graph(s2, r).graph.num_edges());
  }
  CHECK(std::fabs(total / seeds - mean) <= 4.0 * std::sqrt(var / seeds));
  SbmSpec bad = s2;
  bad.noise = {1.0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("graph validation") {
  GraphData g = two_cliques(3);
  g.adjacency[0].push_back(0);
  CHECK_THROWS(g.validate());
  CHECK_THROWS(CommunityAssignment::from_labels({0, 1}).validate(3));
}

}  // TEST_SUITE
