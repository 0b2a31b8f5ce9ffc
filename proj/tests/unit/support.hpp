#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>
#include <vector>

#include "conformal_kit/core.hpp"
#include "conformal_kit/linalg.hpp"
#include "conformal_kit/rng.hpp"

namespace ckit::testing {

// Small weighted samples with ties and zero weights drawn from a coarse lattice.
inline WeightedScoreSample gen_weighted_sample(Rng& rng, std::size_t max_n = 12) {
  const std::size_t n = 1 + rng.below(max_n);
  WeightedScoreSample s;
  for (std::size_t i = 0; i < n; ++i) {
    s.scores.push_back(static_cast<double>(rng.below(6)) * 0.5 - 1.0);
    const std::size_t k = rng.below(5);
    s.weights.push_back(k == 0 ? 0.0 : static_cast<double>(k) * 0.25);
  }
  const std::size_t k = rng.below(4);
  s.infinite_weight = k == 0 ? 0.0 : static_cast<double>(k) * 0.25;
  if (std::accumulate(s.weights.begin(), s.weights.end(), s.infinite_weight) == 0.0) {
    s.weights[0] = 1.0;
  }
  return s;
}

inline double gen_alpha(Rng& rng) {
  static const double grid[] = {0.05, 0.1, 0.2, 0.25, 0.3, 0.5, 0.75, 0.9};
  return grid[rng.below(8)];
}

// Sort pairs, scan cumulative mass, first score reaching 1 - alpha.
inline double brute_force_quantile(const WeightedScoreSample& s, double alpha) {
  std::vector<std::pair<double, double>> pairs;
  for (std::size_t i = 0; i < s.scores.size(); ++i) pairs.emplace_back(s.scores[i], s.weights[i]);
  std::sort(pairs.begin(), pairs.end());
  double total = s.infinite_weight;
  for (const auto& p : pairs) total += p.second;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    double mass = 0.0;
    for (std::size_t j = 0; j < pairs.size(); ++j) {
      if (pairs[j].first <= pairs[i].first) mass += pairs[j].second;
    }
    if (mass / total >= 1.0 - alpha) return pairs[i].first;
  }
  return kInf;
}

inline Matrix gen_matrix(Rng& rng, std::size_t n, std::size_t d, double scale = 1.0) {
  Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index k = 0; k < m.cols(); ++k) m(i, k) = scale * rng.normal();
  }
  return m;
}

inline Dataset gen_linear_data(Rng& rng, std::size_t n, std::size_t d, double noise = 1.0) {
  Dataset out;
  out.x = gen_matrix(rng, n, d);
  out.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += out.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
    out.y[i] = s + noise * rng.normal();
  }
  return out;
}

inline std::vector<std::size_t> gen_permutation(Rng& rng, std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

inline Dataset permute(const Dataset& d, const std::vector<std::size_t>& p) {
  Dataset out;
  out.x.resize(d.x.rows(), d.x.cols());
  out.y.resize(d.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    out.x.row(static_cast<Eigen::Index>(i)) = d.x.row(static_cast<Eigen::Index>(p[i]));
    out.y[i] = d.y[p[i]];
  }
  return out;
}

}  // namespace ckit::testing
