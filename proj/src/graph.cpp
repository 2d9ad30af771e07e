#include "mibtack/graph.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <map>
#include <numeric>
#include <queue>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mibtack/io.hpp"

namespace mibt {

namespace {

using Json = nlohmann::json;

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) {
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    fields.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
  }
  return fields;
}

bool skippable(const std::string& line) {
  const auto b = line.find_first_not_of(" \t\r");
  return b == std::string::npos || line[b] == '#';
}

/// Non-blank, non-comment lines of a CSV file. A first line whose leading
/// field starts with a letter is a column header and is dropped.
std::vector<std::string> data_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (skippable(line)) continue;
    const bool header = first && std::isalpha(static_cast<unsigned char>(line[line.find_first_not_of(" \t\r")])) != 0;
    first = false;
    if (!header) lines.push_back(line);
  }
  return lines;
}

long long parse_int(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw Error("");
    return v;
  } catch (...) {
    throw Error("parse failure: expected integer for " + what + ", got '" + s + "'");
  }
}

double parse_real(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw Error("");
    return v;
  } catch (...) {
    throw Error("parse failure: expected number for " + what + ", got '" + s + "'");
  }
}

NodeId checked_node(long long one_based, NodeId n) {
  if (one_based < 1 || one_based > n) {
    throw Error("endpoint out of range: " + std::to_string(one_based) + " not in [1, " +
                std::to_string(n) + "]");
  }
  return static_cast<NodeId>(one_based - 1);
}

/// Collapses a 1-based directed pair list into undirected 0-based pairs and
/// records whether the listing looked directed.
std::vector<std::pair<NodeId, NodeId>> ingest_edges(
    const std::vector<std::pair<long long, long long>>& raw, NodeId n, GraphMetadata& meta) {
  std::set<std::pair<NodeId, NodeId>> directed;
  for (const auto& [a, b] : raw) {
    const NodeId u = checked_node(a, n);
    const NodeId w = checked_node(b, n);
    if (u == w) {
      meta.dropped_self_loops = true;
      continue;
    }
    directed.emplace(u, w);
  }
  bool any_mutual = false;
  bool any_one_way = false;
  std::vector<std::pair<NodeId, NodeId>> out;
  for (const auto& [u, w] : directed) {
    const bool mutual = directed.count({w, u}) > 0;
    any_mutual |= mutual;
    any_one_way |= !mutual;
    if (u < w || !mutual) out.emplace_back(std::min(u, w), std::max(u, w));
  }
  // Mixed listings (some pairs in both directions, some in one) read as directed.
  meta.symmetrized_from_directed = any_mutual && any_one_way;
  return out;
}

void check_labels(const std::vector<long long>& raw, int num_classes, std::vector<ClassId>& out) {
  out.clear();
  for (const long long l : raw) {
    if (l < 1 || l > num_classes) {
      throw Error("label out of range: " + std::to_string(l) + " not in [1, " +
                  std::to_string(num_classes) + "]");
    }
    out.push_back(static_cast<ClassId>(l - 1));
  }
}

std::vector<NodeId> sorted(std::vector<NodeId> v) {
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

Vector Graph::row(NodeId v) const {
  Vector r = Vector::Zero(num_nodes);
  for (SparseAdjacency::InnerIterator it(adjacency, v); it; ++it) r[it.col()] = it.value();
  return r;
}

std::vector<NodeId> Graph::neighbors(NodeId v) const {
  std::vector<NodeId> out;
  for (SparseAdjacency::InnerIterator it(adjacency, v); it; ++it) out.push_back(it.col());
  return out;
}

void Graph::validate() const {
  if (adjacency.rows() != num_nodes || adjacency.cols() != num_nodes) {
    throw Error("adjacency shape does not match num_nodes");
  }
  if (features.rows() != num_nodes) throw Error("feature rows do not match num_nodes");
  if (static_cast<NodeId>(labels.size()) != num_nodes) throw Error("label count does not match num_nodes");
  for (NodeId u = 0; u < num_nodes; ++u) {
    for (SparseAdjacency::InnerIterator it(adjacency, u); it; ++it) {
      if (it.col() == u) throw Error("self-loop stored in adjacency");
      if (it.value() != 1.0) throw Error("adjacency is not binary");
      if (adjacency.coeff(it.col(), u) != 1.0) throw Error("adjacency is not symmetric");
    }
  }
  for (const ClassId l : labels) {
    if (l < 0 || l >= num_classes) throw Error("label out of range");
  }
  std::vector<char> seen(static_cast<std::size_t>(num_nodes), 0);
  for (const auto* part : {&splits.train, &splits.validation, &splits.test}) {
    for (const NodeId v : *part) {
      if (v < 0 || v >= num_nodes) throw Error("split node out of range");
      if (seen[static_cast<std::size_t>(v)]) throw Error("splits are not disjoint");
      seen[static_cast<std::size_t>(v)] = 1;
    }
  }
}

bool operator==(const Graph& a, const Graph& b) {
  if (a.num_nodes != b.num_nodes || a.num_classes != b.num_classes) return false;
  if (a.labels != b.labels || a.features != b.features) return false;
  if (a.splits.train != b.splits.train || a.splits.validation != b.splits.validation ||
      a.splits.test != b.splits.test) {
    return false;
  }
  const Matrix da = Matrix(a.adjacency);
  const Matrix db = Matrix(b.adjacency);
  return da == db;
}

Graph make_graph(NodeId num_nodes, int num_classes,
                 const std::vector<std::pair<NodeId, NodeId>>& edges, Matrix features,
                 std::vector<ClassId> labels, Splits splits) {
  Graph g;
  g.num_nodes = num_nodes;
  g.num_classes = num_classes;
  std::set<std::pair<NodeId, NodeId>> undirected;
  for (const auto& [u, w] : edges) {
    if (u < 0 || u >= num_nodes || w < 0 || w >= num_nodes) throw Error("endpoint out of range");
    if (u == w) {
      g.metadata.dropped_self_loops = true;
      continue;
    }
    undirected.emplace(std::min(u, w), std::max(u, w));
  }
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(undirected.size() * 2);
  for (const auto& [u, w] : undirected) {
    triplets.emplace_back(u, w, 1.0);
    triplets.emplace_back(w, u, 1.0);
  }
  g.adjacency.resize(num_nodes, num_nodes);
  g.adjacency.setFromTriplets(triplets.begin(), triplets.end());
  g.adjacency.makeCompressed();
  g.features = std::move(features);
  g.labels = std::move(labels);
  g.splits = std::move(splits);
  g.validate();
  return g;
}

Graph with_flipped_edges(const Graph& g, NodeId owner, const std::vector<NodeId>& partners) {
  std::set<std::pair<NodeId, NodeId>> edges;
  for (NodeId u = 0; u < g.num_nodes; ++u) {
    for (SparseAdjacency::InnerIterator it(g.adjacency, u); it; ++it) {
      if (u < it.col()) edges.emplace(u, it.col());
    }
  }
  for (const NodeId w : partners) {
    if (w == owner) throw Error("cannot flip a self-loop");
    const std::pair<NodeId, NodeId> e{std::min(owner, w), std::max(owner, w)};
    if (!edges.erase(e)) edges.insert(e);
  }
  Graph out = make_graph(g.num_nodes, g.num_classes, {edges.begin(), edges.end()}, g.features,
                         g.labels, g.splits);
  out.metadata = g.metadata;
  return out;
}

Splits random_splits(NodeId num_nodes, std::uint64_t seed) {
  std::vector<NodeId> order(static_cast<std::size_t>(num_nodes));
  std::iota(order.begin(), order.end(), NodeId{0});
  Rng rng(seed);
  rng.shuffle(order);
  const auto labeled = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(num_nodes)));
  const std::size_t n_train = (labeled + 1) / 2;
  Splits s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                      order.begin() + static_cast<std::ptrdiff_t>(labeled));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(labeled), order.end());
  s.train = sorted(std::move(s.train));
  s.validation = sorted(std::move(s.validation));
  s.test = sorted(std::move(s.test));
  return s;
}

Graph parse_canonical_json(const std::string& text, const LoadOptions& options) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::exception& e) {
    throw Error(std::string("parse failure: ") + e.what());
  }
  try {
    const auto n = doc.at("num_nodes").get<long long>();
    const int c = doc.at("num_classes").get<int>();
    if (n < 0 || c < 1) throw Error("parse failure: invalid num_nodes/num_classes");
    const NodeId num_nodes = static_cast<NodeId>(n);

    std::vector<std::pair<long long, long long>> raw;
    for (const auto& e : doc.at("edges")) {
      if (e.size() != 2) throw Error("parse failure: edge must be a pair");
      raw.emplace_back(e[0].get<long long>(), e[1].get<long long>());
    }
    GraphMetadata meta;
    auto edges = ingest_edges(raw, num_nodes, meta);

    Matrix features;
    const auto& rows = doc.at("features");
    if (static_cast<NodeId>(rows.size()) != num_nodes) throw Error("parse failure: feature row count");
    const auto dim = rows.empty() ? Eigen::Index{0} : static_cast<Eigen::Index>(rows[0].size());
    features.resize(num_nodes, dim);
    for (NodeId i = 0; i < num_nodes; ++i) {
      const auto& r = rows[static_cast<std::size_t>(i)];
      if (static_cast<Eigen::Index>(r.size()) != dim) throw Error("parse failure: ragged feature rows");
      for (Eigen::Index j = 0; j < dim; ++j) features(i, j) = r[static_cast<std::size_t>(j)].get<double>();
    }
    if (options.identity_features) features = Matrix::Identity(num_nodes, num_nodes);

    std::vector<ClassId> labels;
    check_labels(doc.at("labels").get<std::vector<long long>>(), c, labels);

    Splits splits;
    if (doc.contains("splits")) {
      const auto& s = doc.at("splits");
      auto read = [&](const char* key) {
        std::vector<NodeId> out;
        for (const auto& x : s.at(key)) out.push_back(checked_node(x.get<long long>(), num_nodes));
        return out;
      };
      splits.train = read("train");
      splits.validation = read("validation");
      splits.test = read("test");
    } else {
      splits = random_splits(num_nodes, options.split_seed);
    }
    Graph g = make_graph(num_nodes, c, edges, std::move(features), std::move(labels), std::move(splits));
    g.metadata.symmetrized_from_directed = meta.symmetrized_from_directed;
    g.metadata.dropped_self_loops |= meta.dropped_self_loops;
    return g;
  } catch (const Json::exception& e) {
    throw Error(std::string("parse failure: ") + e.what());
  }
}

std::string to_canonical_json(const Graph& g) {
  Json doc;
  doc["num_nodes"] = g.num_nodes;
  doc["num_classes"] = g.num_classes;
  Json edges = Json::array();
  for (NodeId u = 0; u < g.num_nodes; ++u) {
    for (SparseAdjacency::InnerIterator it(g.adjacency, u); it; ++it) {
      if (u < it.col()) edges.push_back({u + 1, it.col() + 1});
    }
  }
  doc["edges"] = std::move(edges);
  Json rows = Json::array();
  for (NodeId i = 0; i < g.num_nodes; ++i) {
    Json r = Json::array();
    for (Eigen::Index j = 0; j < g.features.cols(); ++j) r.push_back(g.features(i, j));
    rows.push_back(std::move(r));
  }
  doc["features"] = std::move(rows);
  Json labels = Json::array();
  for (const ClassId l : g.labels) labels.push_back(l + 1);
  doc["labels"] = std::move(labels);
  auto ids = [](const std::vector<NodeId>& v) {
    Json a = Json::array();
    for (const NodeId x : v) a.push_back(x + 1);
    return a;
  };
  doc["splits"] = {{"train", ids(g.splits.train)},
                   {"validation", ids(g.splits.validation)},
                   {"test", ids(g.splits.test)}};
  return doc.dump() + "\n";
}

void save_graph(const Graph& g, const std::string& path) {
  write_text_atomic(path, to_canonical_json(g));
}

Graph load_graph(const std::string& path, GraphFormat format, const LoadOptions& options) {
  if (format == GraphFormat::CanonicalJson) return parse_canonical_json(read_text_file(path), options);

  std::string stem = path;
  const std::string suffix = ".edges.csv";
  if (stem.size() > suffix.size() && stem.compare(stem.size() - suffix.size(), suffix.size(), suffix) == 0) {
    stem.resize(stem.size() - suffix.size());
  }

  std::vector<std::vector<double>> feature_rows;
  {
    for (const std::string& line : data_lines(read_text_file(stem + ".features.csv"))) {
      std::vector<double> row;
      for (const auto& f : split_csv_line(line)) row.push_back(parse_real(f, "feature"));
      feature_rows.push_back(std::move(row));
    }
  }
  const auto num_nodes = static_cast<NodeId>(feature_rows.size());
  const auto dim = feature_rows.empty() ? Eigen::Index{0} : static_cast<Eigen::Index>(feature_rows[0].size());
  Matrix features(num_nodes, dim);
  for (NodeId i = 0; i < num_nodes; ++i) {
    const auto& r = feature_rows[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(r.size()) != dim) throw Error("parse failure: ragged feature rows");
    for (Eigen::Index j = 0; j < dim; ++j) features(i, j) = r[static_cast<std::size_t>(j)];
  }
  if (options.identity_features) features = Matrix::Identity(num_nodes, num_nodes);

  std::vector<long long> raw_labels;
  {
    for (const std::string& line : data_lines(read_text_file(stem + ".labels.csv"))) {
      raw_labels.push_back(parse_int(split_csv_line(line).at(0), "label"));
    }
  }
  if (static_cast<NodeId>(raw_labels.size()) != num_nodes) {
    throw Error("parse failure: label count does not match feature rows");
  }
  const int num_classes = static_cast<int>(*std::max_element(raw_labels.begin(), raw_labels.end()));
  std::vector<ClassId> labels;
  check_labels(raw_labels, num_classes, labels);

  std::vector<std::pair<long long, long long>> raw;
  {
    for (const std::string& line : data_lines(read_text_file(path))) {
      const auto f = split_csv_line(line);
      if (f.size() != 2) throw Error("parse failure: edge line must be 'u,w': " + line);
      raw.emplace_back(parse_int(f[0], "edge endpoint"), parse_int(f[1], "edge endpoint"));
    }
  }
  GraphMetadata meta;
  auto edges = ingest_edges(raw, num_nodes, meta);

  Splits splits;
  const std::string split_path = stem + ".splits.csv";
  if (std::filesystem::exists(split_path)) {
    for (const std::string& line : data_lines(read_text_file(split_path))) {
      const auto f = split_csv_line(line);
      if (f.size() != 2) throw Error("parse failure: split line must be 'node,split'");
      const NodeId v = checked_node(parse_int(f[0], "split node"), num_nodes);
      if (f[1] == "train") splits.train.push_back(v);
      else if (f[1] == "validation") splits.validation.push_back(v);
      else if (f[1] == "test") splits.test.push_back(v);
      else throw Error("parse failure: unknown split '" + f[1] + "'");
    }
  } else {
    splits = random_splits(num_nodes, options.split_seed);
  }
  Graph g = make_graph(num_nodes, num_classes, edges, std::move(features), std::move(labels), std::move(splits));
  g.metadata.symmetrized_from_directed = meta.symmetrized_from_directed;
  g.metadata.dropped_self_loops |= meta.dropped_self_loops;
  return g;
}

std::vector<NodeId> connected_components(const Graph& g) {
  std::vector<NodeId> comp(static_cast<std::size_t>(g.num_nodes), -1);
  NodeId next = 0;
  for (NodeId s = 0; s < g.num_nodes; ++s) {
    if (comp[static_cast<std::size_t>(s)] >= 0) continue;
    std::queue<NodeId> frontier;
    frontier.push(s);
    comp[static_cast<std::size_t>(s)] = next;
    while (!frontier.empty()) {
      const NodeId u = frontier.front();
      frontier.pop();
      for (SparseAdjacency::InnerIterator it(g.adjacency, u); it; ++it) {
        auto& c = comp[static_cast<std::size_t>(it.col())];
        if (c < 0) {
          c = next;
          frontier.push(it.col());
        }
      }
    }
    ++next;
  }
  return comp;
}

Graph largest_connected_component(const Graph& g) {
  if (g.num_nodes == 0) return g;
  const auto comp = connected_components(g);
  const NodeId num_comp = *std::max_element(comp.begin(), comp.end()) + 1;
  std::vector<NodeId> sizes(static_cast<std::size_t>(num_comp), 0);
  for (const NodeId c : comp) ++sizes[static_cast<std::size_t>(c)];
  // Components are numbered by smallest member, so the first maximum wins ties.
  const auto best = static_cast<NodeId>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());

  std::vector<NodeId> new_id(static_cast<std::size_t>(g.num_nodes), -1);
  NodeId n = 0;
  for (NodeId u = 0; u < g.num_nodes; ++u) {
    if (comp[static_cast<std::size_t>(u)] == best) new_id[static_cast<std::size_t>(u)] = n++;
  }
  std::vector<std::pair<NodeId, NodeId>> edges;
  Matrix features(n, g.features.cols());
  std::vector<ClassId> labels(static_cast<std::size_t>(n));
  for (NodeId u = 0; u < g.num_nodes; ++u) {
    const NodeId nu = new_id[static_cast<std::size_t>(u)];
    if (nu < 0) continue;
    features.row(nu) = g.features.row(u);
    labels[static_cast<std::size_t>(nu)] = g.labels[static_cast<std::size_t>(u)];
    for (SparseAdjacency::InnerIterator it(g.adjacency, u); it; ++it) {
      if (u < it.col()) edges.emplace_back(nu, new_id[static_cast<std::size_t>(it.col())]);
    }
  }
  auto remap = [&](const std::vector<NodeId>& ids) {
    std::vector<NodeId> out;
    for (const NodeId v : ids) {
      if (new_id[static_cast<std::size_t>(v)] >= 0) out.push_back(new_id[static_cast<std::size_t>(v)]);
    }
    return out;
  };
  Splits splits{remap(g.splits.train), remap(g.splits.validation), remap(g.splits.test)};
  Graph out = make_graph(n, g.num_classes, edges, std::move(features), std::move(labels), std::move(splits));
  out.metadata = g.metadata;
  return out;
}

void SbmParams::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (num_nodes < 0 || num_blocks < 1) throw Error("SbmParams: need num_nodes >= 0 and num_blocks >= 1");
  if (num_blocks > num_nodes) throw Error("SbmParams: num_blocks exceeds num_nodes");
  if (!prob(intra_block_edge_prob) || !prob(inter_block_edge_prob)) {
    throw Error("SbmParams: edge probabilities must lie in [0, 1]");
  }
  if (feature_dim < 0) throw Error("SbmParams: negative feature_dim");
}

int sbm_block_of(const SbmParams& p, NodeId node) {
  return static_cast<int>((node * p.num_blocks) / p.num_nodes);
}

Graph generate_sbm(const SbmParams& p) {
  p.validate();
  Rng rng(p.seed);
  std::vector<ClassId> labels(static_cast<std::size_t>(p.num_nodes));
  for (NodeId i = 0; i < p.num_nodes; ++i) labels[static_cast<std::size_t>(i)] = sbm_block_of(p, i);

  std::vector<std::pair<NodeId, NodeId>> edges;
  for (NodeId u = 0; u < p.num_nodes; ++u) {
    for (NodeId w = u + 1; w < p.num_nodes; ++w) {
      const bool same = labels[static_cast<std::size_t>(u)] == labels[static_cast<std::size_t>(w)];
      const double prob = same ? p.intra_block_edge_prob : p.inter_block_edge_prob;
      // Always draw, so the stream does not depend on the probabilities.
      if (rng.uniform() < prob) edges.emplace_back(u, w);
    }
  }

  Matrix means(p.num_blocks, p.feature_dim);
  for (int b = 0; b < p.num_blocks; ++b) {
    for (Eigen::Index j = 0; j < p.feature_dim; ++j) means(b, j) = rng.bernoulli(0.5) ? 1.0 : -1.0;
  }
  Matrix features(p.num_nodes, p.feature_dim);
  for (NodeId i = 0; i < p.num_nodes; ++i) {
    for (Eigen::Index j = 0; j < p.feature_dim; ++j) {
      const double x = p.feature_signal * means(labels[static_cast<std::size_t>(i)], j) + rng.uniform(-1.0, 1.0);
      features(i, j) = x > 0.0 ? 1.0 : 0.0;
    }
  }
  Splits splits = random_splits(p.num_nodes, mix_seed(p.seed, 1));
  return make_graph(p.num_nodes, p.num_blocks, edges, std::move(features), std::move(labels), std::move(splits));
}

double jaccard_similarity(const Graph& g, NodeId u, NodeId w) {
  const auto fu = g.features.row(u);
  const auto fw = g.features.row(w);
  auto binary = [](double x) { return x == 0.0 || x == 1.0; };
  Eigen::Index inter = 0;
  Eigen::Index uni = 0;
  for (Eigen::Index j = 0; j < g.features.cols(); ++j) {
    if (!binary(fu[j]) || !binary(fw[j])) throw Error("jaccard_similarity: features are not binary");
    const bool a = fu[j] != 0.0;
    const bool b = fw[j] != 0.0;
    inter += (a && b) ? 1 : 0;
    uni += (a || b) ? 1 : 0;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

Eigen::Index degree(const Graph& g, NodeId v) {
  if (v < 0 || v >= g.num_nodes) throw Error("degree: node out of range");
  return g.adjacency.outerIndexPtr()[v + 1] - g.adjacency.outerIndexPtr()[v];
}

Eigen::VectorXi degrees(const Graph& g) {
  Eigen::VectorXi d(g.num_nodes);
  for (NodeId v = 0; v < g.num_nodes; ++v) d[v] = static_cast<int>(degree(g, v));
  return d;
}

}  // namespace mibt
