#pragma once

// Shared fixtures and independent oracles for the test executables.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "mibtack/attack.hpp"

namespace mibt::testing {

/// The pinned benchmark: largest component of the default SBM.
inline const Graph& benchmark_graph() {
  static const Graph g = largest_connected_component(generate_sbm(SbmParams{}));
  return g;
}

inline const GnnModel& benchmark_model(Arch arch) {
  static const GnnModel gcn = train(Arch::GCN, benchmark_graph(), default_train_config(Arch::GCN));
  static const GnnModel sgc = train(Arch::SGC, benchmark_graph(), default_train_config(Arch::SGC));
  static const GnnModel appnp = train(Arch::APPNP, benchmark_graph(), default_train_config(Arch::APPNP));
  switch (arch) {
    case Arch::GCN: return gcn;
    case Arch::SGC: return sgc;
    case Arch::APPNP: return appnp;
  }
  return gcn;
}

/// Small seeded SBM used where exhaustive search has to stay cheap.
inline Graph toy_graph(NodeId n, int blocks, std::uint64_t seed) {
  SbmParams p;
  p.num_nodes = n;
  p.num_blocks = blocks;
  p.intra_block_edge_prob = 0.5;
  p.inter_block_edge_prob = 0.1;
  p.feature_dim = 8;
  p.feature_signal = 0.6;
  p.seed = seed;
  Graph g = generate_sbm(p);
  // Every node is labeled so the toy model has something to fit; targets are
  // picked from all nodes.
  g.splits = Splits{};
  for (NodeId i = 0; i < n; ++i) (i % 3 == 2 ? g.splits.validation : g.splits.train).push_back(i);
  return g;
}

/// Margin of v on g with the edges to `partners` flipped, through a freshly
/// rebuilt graph and a full forward pass.
inline double oracle_margin(const GnnModel& m, const Graph& g, NodeId v, const std::vector<NodeId>& partners) {
  const Graph h = with_flipped_edges(g, v, partners);
  const Matrix p = predict(m, h);
  const ClassId y = g.labels[static_cast<std::size_t>(v)];
  double best = -1.0;
  for (Eigen::Index c = 0; c < p.cols(); ++c) {
    if (c != y) best = std::max(best, p(v, c));
  }
  return p(v, y) - best;
}

/// Smallest number of flips (<= max_size) making v misclassified with margin
/// < -gamma, by exhaustive enumeration. nullopt if none exists.
inline std::optional<int> exhaustive_min_budget(const GnnModel& m, const Graph& g, NodeId v, int max_size,
                                                double gamma = 0.0) {
  if (oracle_margin(m, g, v, {}) < -gamma) return 0;
  std::vector<NodeId> others;
  for (NodeId u = 0; u < g.num_nodes; ++u) {
    if (u != v) others.push_back(u);
  }
  std::vector<NodeId> chosen;
  std::function<bool(std::size_t, int)> search = [&](std::size_t start, int left) {
    if (left == 0) return oracle_margin(m, g, v, chosen) < -gamma;
    for (std::size_t i = start; i < others.size(); ++i) {
      chosen.push_back(others[i]);
      const bool hit = search(i + 1, left - 1);
      chosen.pop_back();
      if (hit) return true;
    }
    return false;
  };
  for (int k = 1; k <= max_size; ++k) {
    if (search(0, k)) return k;
  }
  return std::nullopt;
}

/// Random relaxed perturbation with entries in {0} or [h, 1 - h] away from
/// the kinks of the clamp, mostly small.
inline Vector random_delta(Rng& rng, NodeId n, NodeId v, double h) {
  Vector d(n);
  for (NodeId i = 0; i < n; ++i) d[i] = rng.bernoulli(0.2) ? rng.uniform(10 * h, 1 - 10 * h) : rng.uniform(2 * h, 0.05);
  d[v] = 0.0;
  return d;
}

inline double max_relative_error(const Vector& a, const Vector& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), 1e-6});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

}  // namespace mibt::testing
