#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mibtack/types.hpp"

namespace mibt {

struct Splits {
  std::vector<NodeId> train;
  std::vector<NodeId> validation;
  std::vector<NodeId> test;
};

/// Ingestion notes that do not invalidate the graph.
struct GraphMetadata {
  bool symmetrized_from_directed = false;
  bool dropped_self_loops = false;
};

/// Undirected attributed graph. Node ids and labels are 0-based in memory and
/// 1-based in every file format. Immutable once validated.
struct Graph {
  NodeId num_nodes = 0;
  int num_classes = 0;
  SparseAdjacency adjacency;  // symmetric, binary, empty diagonal
  Matrix features;            // num_nodes x feature_dim
  std::vector<ClassId> labels;
  Splits splits;
  GraphMetadata metadata;

  Eigen::Index feature_dim() const { return features.cols(); }
  bool has_edge(NodeId u, NodeId w) const { return adjacency.coeff(u, w) != 0.0; }
  /// Dense adjacency row a_v.
  Vector row(NodeId v) const;
  std::vector<NodeId> neighbors(NodeId v) const;
  std::size_t num_edges() const { return static_cast<std::size_t>(adjacency.nonZeros()) / 2; }

  /// Throws Error if any structural invariant is violated.
  void validate() const;
};

bool operator==(const Graph& a, const Graph& b);

/// One node's (possibly relaxed) adjacency vector; values[owner] is 0 and all
/// entries lie in [0, 1].
struct AdjacencyRow {
  NodeId owner = 0;
  Vector values;
};

/// Builds a graph from 0-based undirected pairs. Duplicates and reversed
/// duplicates collapse into one symmetric edge; self-loops are dropped.
Graph make_graph(NodeId num_nodes, int num_classes,
                 const std::vector<std::pair<NodeId, NodeId>>& edges, Matrix features,
                 std::vector<ClassId> labels, Splits splits);

/// Returns g with the listed edges of `owner` flipped (added if absent, removed
/// if present).
Graph with_flipped_edges(const Graph& g, NodeId owner, const std::vector<NodeId>& partners);

/// 20% labeled (halved into train/validation), 80% test.
Splits random_splits(NodeId num_nodes, std::uint64_t seed);

enum class GraphFormat { CanonicalJson, EdgeListCsv };

struct LoadOptions {
  /// Replace features by the identity matrix (for featureless graphs).
  bool identity_features = false;
  /// Split seed used when the input carries no splits.
  std::uint64_t split_seed = 0;
};

/// CanonicalJson: `path` is the document. EdgeListCsv: `path` is the edge list
/// and `<stem>.features.csv`, `<stem>.labels.csv` and optionally
/// `<stem>.splits.csv` live next to it, where `<stem>` is `path` with a
/// trailing `.edges.csv` removed.
Graph load_graph(const std::string& path, GraphFormat format, const LoadOptions& options = {});
Graph parse_canonical_json(const std::string& text, const LoadOptions& options = {});
std::string to_canonical_json(const Graph& g);
void save_graph(const Graph& g, const std::string& path);

Graph largest_connected_component(const Graph& g);
/// Connected-component id per node, numbered in order of smallest member.
std::vector<NodeId> connected_components(const Graph& g);

struct SbmParams {
  NodeId num_nodes = 200;
  int num_blocks = 4;
  double intra_block_edge_prob = 0.15;
  double inter_block_edge_prob = 0.01;
  Eigen::Index feature_dim = 16;
  double feature_signal = 0.5;
  std::uint64_t seed = 7;

  void validate() const;
};

/// Block of node i is its label; blocks are contiguous id ranges of
/// near-equal size.
int sbm_block_of(const SbmParams& p, NodeId node);
Graph generate_sbm(const SbmParams& p);

double jaccard_similarity(const Graph& g, NodeId u, NodeId w);
Eigen::Index degree(const Graph& g, NodeId v);
Eigen::VectorXi degrees(const Graph& g);

}  // namespace mibt
