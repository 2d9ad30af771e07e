#include "mibtack/gnn.hpp"

#include <cmath>
#include <memory>
#include <limits>

#include <json.hpp>

#include "mibtack/io.hpp"
#include "mibtack/perturbation.hpp"

namespace mibt {

namespace {

using Json = nlohmann::json;

Matrix relu(const Matrix& m) { return m.cwiseMax(0.0); }

Matrix row_softmax(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - mx).exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

void check_finite(const Matrix& m, int layer) {
  if (!m.allFinite()) throw Error("non-finite activation at layer " + std::to_string(layer));
}

Matrix dropout_mask(Rng& rng, Eigen::Index rows, Eigen::Index cols, double p) {
  Matrix mask(rows, cols);
  const double keep = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) mask(i, j) = rng.uniform() < p ? 0.0 : keep;
  }
  return mask;
}

/// One evaluation of the network with every intermediate kept for the
/// backward pass.
struct Pass {
  const GnnModel* model = nullptr;
  const SparseAdjacency* op = nullptr;
  const Matrix* x = nullptr;
  Matrix mask;  // empty at inference

  // GCN: b1 = X W1, y1 = S b1, h1 = relu(y1) (masked), b2 = h1 W2, z = S b2
  // SGC: props[k] = S^k X, dropped = props[K] (masked), z = dropped W
  // APPNP: a1 = X W1, h1 = relu(a1) (masked), b2 = h1 W2 (= props[0]),
  //        props[k] = (1 - t) S props[k-1] + t b2
  Matrix b1, y1, h1, b2, logits, probs;
  std::vector<Matrix> props;

  Matrix masked(const Matrix& m) const { return mask.size() == 0 ? m : Matrix(m.cwiseProduct(mask)); }

  /// With reuse_prefix the adjacency-independent products (b1, h1, b2 for
  /// GCN/APPNP) are taken as already filled in.
  void run(Rng* rng, double dropout, bool reuse_prefix = false) {
    const GnnModel& m = *model;
    const SparseAdjacency& s = *op;
    switch (m.arch) {
      case Arch::GCN: {
        if (!reuse_prefix) b1 = *x * m.weights[0];
        y1 = s * b1;
        check_finite(y1, 1);
        if (rng) mask = dropout_mask(*rng, y1.rows(), y1.cols(), dropout);
        h1 = masked(relu(y1));
        b2 = h1 * m.weights[1];
        logits = s * b2;
        check_finite(logits, 2);
        break;
      }
      case Arch::SGC: {
        props.assign(1, *x);
        for (int k = 0; k < m.hops; ++k) props.push_back(s * props.back());
        check_finite(props.back(), 1);
        // No hidden layer, so no dropout.
        h1 = props.back();
        logits = h1 * m.weights[0];
        check_finite(logits, 2);
        break;
      }
      case Arch::APPNP: {
        if (!reuse_prefix) {
          b1 = *x * m.weights[0];
          check_finite(b1, 1);
          if (rng) mask = dropout_mask(*rng, b1.rows(), b1.cols(), dropout);
          h1 = masked(relu(b1));
          b2 = h1 * m.weights[1];
          check_finite(b2, 2);
        }
        props.assign(1, b2);
        for (int k = 0; k < m.hops; ++k) {
          props.push_back((1.0 - m.teleport) * (s * props.back()) + m.teleport * b2);
        }
        logits = props.back();
        check_finite(logits, 3);
        break;
      }
    }
    probs = row_softmax(logits);
  }

  /// Backpropagates dL/dlogits. Fills weight gradients when requested and
  /// appends (H, G) pairs for every product Y = S H, where G = dL/dY.
  void backward(const Matrix& g_logits, std::vector<Matrix>* weight_grads,
                std::vector<std::pair<Matrix, Matrix>>* op_terms) const {
    const GnnModel& m = *model;
    const SparseAdjacency& s = *op;
    auto relu_gate = [](const Matrix& g, const Matrix& pre) {
      return Matrix(g.cwiseProduct((pre.array() > 0.0).cast<double>().matrix()));
    };
    switch (m.arch) {
      case Arch::GCN: {
        if (op_terms) op_terms->emplace_back(b2, g_logits);
        const Matrix g_b2 = s * g_logits;
        const Matrix g_h1 = masked(g_b2 * m.weights[1].transpose());
        const Matrix g_y1 = relu_gate(g_h1, y1);
        if (op_terms) op_terms->emplace_back(b1, g_y1);
        if (weight_grads) {
          weight_grads->assign(2, Matrix());
          (*weight_grads)[1] = h1.transpose() * g_b2;
          (*weight_grads)[0] = x->transpose() * (s * g_y1);
        }
        break;
      }
      case Arch::SGC: {
        if (weight_grads) weight_grads->assign(1, h1.transpose() * g_logits);
        if (op_terms) {
          Matrix g = masked(g_logits * m.weights[0].transpose());
          for (int k = m.hops; k >= 1; --k) {
            op_terms->emplace_back(props[static_cast<std::size_t>(k - 1)], g);
            if (k > 1) g = s * g;
          }
        }
        break;
      }
      case Arch::APPNP: {
        Matrix g_z = g_logits;
        Matrix g_b2 = Matrix::Zero(b2.rows(), b2.cols());
        for (int k = m.hops; k >= 1; --k) {
          g_b2 += m.teleport * g_z;
          const Matrix g_y = (1.0 - m.teleport) * g_z;
          if (op_terms) op_terms->emplace_back(props[static_cast<std::size_t>(k - 1)], g_y);
          g_z = s * g_y;
        }
        g_b2 += g_z;
        if (weight_grads) {
          weight_grads->assign(2, Matrix());
          (*weight_grads)[1] = h1.transpose() * g_b2;
          const Matrix g_h1 = relu_gate(masked(g_b2 * m.weights[1].transpose()), b1);
          (*weight_grads)[0] = x->transpose() * g_h1;
        }
        break;
      }
    }
  }
};

Matrix init_uniform(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(rows, 1)));
  Matrix w(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) w(i, j) = rng.uniform(-bound, bound);
  }
  return w;
}

Json matrix_to_json(const Matrix& w) {
  Json data = Json::array();
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) data.push_back(w(i, j));
  }
  return {{"rows", w.rows()}, {"cols", w.cols()}, {"data", std::move(data)}};
}

Matrix matrix_from_json(const Json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw Error("checkpoint: weight payload size mismatch");
  Matrix w(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j2 = 0; j2 < cols; ++j2) w(i, j2) = data[static_cast<std::size_t>(i * cols + j2)].get<double>();
  }
  return w;
}

}  // namespace

std::string to_string(Arch arch) {
  switch (arch) {
    case Arch::GCN: return "gcn";
    case Arch::SGC: return "sgc";
    case Arch::APPNP: return "appnp";
  }
  return "unknown";
}

Arch parse_arch(const std::string& name) {
  if (name == "gcn" || name == "GCN") return Arch::GCN;
  if (name == "sgc" || name == "SGC") return Arch::SGC;
  if (name == "appnp" || name == "APPNP") return Arch::APPNP;
  throw Error("unknown architecture: " + name);
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error("TrainConfig: learning rate must be positive");
  if (weight_decay < 0.0) throw Error("TrainConfig: weight decay must be non-negative");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error("TrainConfig: dropout must lie in [0, 1)");
  if (max_epochs < 1 || patience < 1) throw Error("TrainConfig: epochs and patience must be positive");
}

TrainConfig default_train_config(Arch arch) {
  TrainConfig tc;
  tc.weight_decay = arch == Arch::GCN ? 5e-4 : 5e-6;
  return tc;
}

void GnnModel::validate() const {
  const std::size_t expected = arch == Arch::SGC ? 1 : 2;
  if (weights.size() != expected) throw Error("GnnModel: wrong number of weight matrices");
  for (std::size_t l = 1; l < weights.size(); ++l) {
    if (weights[l - 1].cols() != weights[l].rows()) throw Error("GnnModel: weight shapes do not chain");
  }
  for (const auto& w : weights) {
    if (!w.allFinite()) throw Error("GnnModel: non-finite weights");
  }
  if (hops < 0) throw Error("GnnModel: negative propagation depth");
  if (arch == Arch::APPNP && !(teleport >= 0.0 && teleport <= 1.0)) throw Error("GnnModel: teleport outside [0, 1]");
}

bool operator==(const GnnModel& a, const GnnModel& b) {
  if (a.arch != b.arch || a.hidden != b.hidden || a.hops != b.hops || a.teleport != b.teleport) return false;
  if (a.weights.size() != b.weights.size()) return false;
  for (std::size_t i = 0; i < a.weights.size(); ++i) {
    if (a.weights[i].rows() != b.weights[i].rows() || a.weights[i].cols() != b.weights[i].cols()) return false;
    if (a.weights[i] != b.weights[i]) return false;
  }
  return true;
}

GnnModel make_model(Arch arch, Eigen::Index input_dim, Eigen::Index num_classes) {
  GnnModel m;
  m.arch = arch;
  m.train_config = default_train_config(arch);
  switch (arch) {
    case Arch::GCN:
      m.hidden = 16;
      m.hops = 2;
      m.weights = {Matrix::Zero(input_dim, m.hidden), Matrix::Zero(m.hidden, num_classes)};
      break;
    case Arch::SGC:
      m.hidden = 0;
      m.hops = 2;
      m.weights = {Matrix::Zero(input_dim, num_classes)};
      break;
    case Arch::APPNP:
      m.hidden = 64;
      m.hops = 10;
      m.teleport = 0.1;
      m.weights = {Matrix::Zero(input_dim, m.hidden), Matrix::Zero(m.hidden, num_classes)};
      break;
  }
  return m;
}

NormalizedAdjacency normalize_adjacency(const Graph& base) {
  return normalize_adjacency(base, AdjacencyRow{-1, Vector()});
}

NormalizedAdjacency normalize_adjacency(const Graph& base, const AdjacencyRow& overlay) {
  const NodeId n = base.num_nodes;
  const NodeId owner = overlay.owner;
  if (owner >= 0) {
    if (overlay.values.size() != n) throw Error("normalize_adjacency: overlay length mismatch");
    if (overlay.values[owner] != 0.0) throw Error("normalize_adjacency: overlay has a self entry");
  }
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(base.adjacency.nonZeros() + 3 * n));
  for (NodeId u = 0; u < n; ++u) {
    triplets.emplace_back(u, u, 1.0);
    if (u == owner) continue;
    for (SparseAdjacency::InnerIterator it(base.adjacency, u); it; ++it) {
      if (it.col() != owner) triplets.emplace_back(u, it.col(), it.value());
    }
  }
  if (owner >= 0) {
    for (NodeId u = 0; u < n; ++u) {
      const double x = overlay.values[u];
      if (x != 0.0) {
        triplets.emplace_back(owner, u, x);
        triplets.emplace_back(u, owner, x);
      }
    }
  }
  NormalizedAdjacency na;
  na.op.resize(n, n);
  na.op.setFromTriplets(triplets.begin(), triplets.end());
  na.op.makeCompressed();
  na.degrees = Vector::Zero(n);
  for (NodeId u = 0; u < n; ++u) {
    for (SparseAdjacency::InnerIterator it(na.op, u); it; ++it) na.degrees[u] += it.value();
  }
  const Vector inv_sqrt = na.degrees.array().rsqrt().matrix();
  for (NodeId u = 0; u < n; ++u) {
    for (SparseAdjacency::InnerIterator it(na.op, u); it; ++it) it.valueRef() *= inv_sqrt[u] * inv_sqrt[it.col()];
  }
  return na;
}

ForwardTrace forward(const GnnModel& m, const NormalizedAdjacency& na, const Matrix& x) {
  if (x.cols() != m.input_dim()) throw Error("forward: feature dimension does not match the model");
  if (x.rows() != na.op.rows()) throw Error("forward: feature rows do not match the graph");
  Pass pass{&m, &na.op, &x, Matrix(), {}, {}, {}, {}, {}, {}, {}};
  pass.run(nullptr, 0.0);
  ForwardTrace t;
  t.post.push_back(x);
  t.pre.push_back(Matrix());
  switch (m.arch) {
    case Arch::GCN:
      t.pre.push_back(pass.y1);
      t.post.push_back(pass.h1);
      t.pre.push_back(pass.logits);
      t.post.push_back(pass.logits);
      break;
    case Arch::SGC:
      t.pre.push_back(pass.props.back());
      t.post.push_back(pass.h1);
      t.pre.push_back(pass.logits);
      t.post.push_back(pass.logits);
      break;
    case Arch::APPNP:
      t.pre.push_back(pass.b1);
      t.post.push_back(pass.h1);
      t.pre.push_back(pass.b2);
      t.post.push_back(pass.logits);
      break;
  }
  t.adjacency = na;
  t.probs = std::move(pass.probs);
  return t;
}

Matrix predict(const GnnModel& m, const Graph& g) {
  return forward(m, normalize_adjacency(g), g.features).probs;
}

Vector node_probs(const GnnModel& m, const Graph& g, const AdjacencyRow& perturbed_row) {
  return forward(m, normalize_adjacency(g, perturbed_row), g.features).probs.row(perturbed_row.owner).transpose();
}

ClassId argmax_class(const Eigen::Ref<const Vector>& probs) {
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < probs.size(); ++c) {
    if (probs[c] > probs[best]) best = c;
  }
  return static_cast<ClassId>(best);
}

double accuracy(const Matrix& probs, const Graph& g, const std::vector<NodeId>& nodes) {
  if (nodes.empty()) return 0.0;
  std::size_t correct = 0;
  for (const NodeId v : nodes) {
    if (argmax_class(probs.row(v).transpose()) == g.labels[static_cast<std::size_t>(v)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(nodes.size());
}

TrainResult train_detailed(Arch arch, const Graph& g, const TrainConfig& tc) {
  tc.validate();
  if (g.splits.train.empty() || g.splits.validation.empty()) {
    throw Error("train: train and validation splits must be nonempty");
  }
  GnnModel model = make_model(arch, g.feature_dim(), g.num_classes);
  model.train_config = tc;
  Rng rng(tc.seed);
  for (auto& w : model.weights) w = init_uniform(rng, w.rows(), w.cols());

  const NormalizedAdjacency na = normalize_adjacency(g);
  const auto n_train = static_cast<double>(g.splits.train.size());

  std::vector<Matrix> m1, m2;
  for (const auto& w : model.weights) {
    m1.push_back(Matrix::Zero(w.rows(), w.cols()));
    m2.push_back(Matrix::Zero(w.rows(), w.cols()));
  }
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;

  TrainResult result;
  result.model = model;
  double best_val = -1.0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  double lowest_val_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int epoch = 0; epoch < tc.max_epochs; ++epoch) {
    Pass pass{&model, &na.op, &g.features, Matrix(), {}, {}, {}, {}, {}, {}, {}};
    pass.run(&rng, tc.dropout);
    double loss = 0.0;
    Matrix g_logits = Matrix::Zero(pass.probs.rows(), pass.probs.cols());
    for (const NodeId v : g.splits.train) {
      const ClassId y = g.labels[static_cast<std::size_t>(v)];
      loss -= std::log(std::max(pass.probs(v, y), 1e-300));
      g_logits.row(v) = pass.probs.row(v);
      g_logits(v, y) -= 1.0;
    }
    loss /= n_train;
    g_logits /= n_train;
    if (!std::isfinite(loss)) throw Error("train: loss diverged at epoch " + std::to_string(epoch));
    result.train_loss.push_back(loss);

    std::vector<Matrix> grads;
    pass.backward(g_logits, &grads, nullptr);
    const double t = epoch + 1;
    for (std::size_t l = 0; l < model.weights.size(); ++l) {
      Matrix grad = grads[l] + tc.weight_decay * model.weights[l];
      m1[l] = kBeta1 * m1[l] + (1.0 - kBeta1) * grad;
      m2[l] = kBeta2 * m2[l] + (1.0 - kBeta2) * grad.cwiseProduct(grad);
      const double c1 = 1.0 - std::pow(kBeta1, t);
      const double c2 = 1.0 - std::pow(kBeta2, t);
      model.weights[l].array() -=
          tc.learning_rate * (m1[l].array() / c1) / ((m2[l].array() / c2).sqrt() + kEps);
    }
    for (const auto& w : model.weights) {
      if (!w.allFinite()) throw Error("train: weights diverged at epoch " + std::to_string(epoch));
    }

    const Matrix val_probs = forward(model, na, g.features).probs;
    const double val = accuracy(val_probs, g, g.splits.validation);
    double val_loss = 0.0;
    for (const NodeId v : g.splits.validation) {
      val_loss -= std::log(std::max(val_probs(v, g.labels[static_cast<std::size_t>(v)]), 1e-300));
    }
    val_loss /= static_cast<double>(g.splits.validation.size());
    result.val_accuracy.push_back(val);
    // Best weights: highest validation accuracy, ties to lower validation
    // loss. Patience runs out only when neither quantity has improved.
    const bool better = val > best_val || (val == best_val && val_loss < best_val_loss);
    if (better) {
      best_val = val;
      best_val_loss = val_loss;
      result.model = model;
      result.best_epoch = epoch;
    }
    if (better || val_loss < lowest_val_loss) {
      since_best = 0;
    } else if (++since_best >= tc.patience) {
      break;
    }
    lowest_val_loss = std::min(lowest_val_loss, val_loss);
  }
  return result;
}

GnnModel train(Arch arch, const Graph& g, const TrainConfig& tc) { return train_detailed(arch, g, tc).model; }

struct NodeObjective::Impl {
  const GnnModel* model;
  const Graph* graph;
  NodeId v;
  ClassId y;
  Vector clean_row;
  std::vector<Eigen::Triplet<double>> base_triplets;  // A without row/col v, plus I
  Pass prefix;

  Vector perturbed_row(const Vector& delta) const {
    if (delta.size() != graph->num_nodes) throw Error("perturbation length does not match the graph");
    Vector a = apply_perturbation(clean_row, delta);
    a[v] = 0.0;
    return a;
  }

  NormalizedAdjacency normalize(const Vector& row) const {
    // Same construction as normalize_adjacency, reusing the untouched part.
    const NodeId n = graph->num_nodes;
    std::vector<Eigen::Triplet<double>> triplets = base_triplets;
    for (NodeId u = 0; u < n; ++u) {
      if (row[u] != 0.0) {
        triplets.emplace_back(v, u, row[u]);
        triplets.emplace_back(u, v, row[u]);
      }
    }
    NormalizedAdjacency na;
    na.op.resize(n, n);
    na.op.setFromTriplets(triplets.begin(), triplets.end());
    na.op.makeCompressed();
    na.degrees = Vector::Zero(n);
    for (NodeId u = 0; u < n; ++u) {
      for (SparseAdjacency::InnerIterator it(na.op, u); it; ++it) na.degrees[u] += it.value();
    }
    const Vector inv_sqrt = na.degrees.array().rsqrt().matrix();
    for (NodeId u = 0; u < n; ++u) {
      for (SparseAdjacency::InnerIterator it(na.op, u); it; ++it) it.valueRef() *= inv_sqrt[u] * inv_sqrt[it.col()];
    }
    return na;
  }

  Pass run(const NormalizedAdjacency& na) const {
    Pass pass = prefix;
    pass.op = &na.op;
    pass.run(nullptr, 0.0, true);
    return pass;
  }
};

NodeObjective::NodeObjective(const GnnModel& m, const Graph& g, NodeId v) {
  if (v < 0 || v >= g.num_nodes) throw Error("node out of range");
  if (g.features.cols() != m.weights.front().rows()) throw Error("feature dimension does not match the model");
  auto impl = std::make_shared<Impl>();
  Impl& s = *impl;
  s.model = &m;
  s.graph = &g;
  s.v = v;
  s.y = g.labels[static_cast<std::size_t>(v)];
  s.clean_row = g.row(v);
  s.base_triplets.reserve(static_cast<std::size_t>(g.adjacency.nonZeros() + g.num_nodes));
  for (NodeId u = 0; u < g.num_nodes; ++u) {
    s.base_triplets.emplace_back(u, u, 1.0);
    if (u == v) continue;
    for (SparseAdjacency::InnerIterator it(g.adjacency, u); it; ++it) {
      if (it.col() != v) s.base_triplets.emplace_back(u, it.col(), it.value());
    }
  }
  s.prefix.model = &m;
  s.prefix.x = &g.features;
  switch (m.arch) {
    case Arch::GCN:
      s.prefix.b1 = g.features * m.weights[0];
      break;
    case Arch::SGC:
      break;
    case Arch::APPNP:
      s.prefix.b1 = g.features * m.weights[0];
      check_finite(s.prefix.b1, 1);
      s.prefix.h1 = relu(s.prefix.b1);
      s.prefix.b2 = s.prefix.h1 * m.weights[1];
      check_finite(s.prefix.b2, 2);
      break;
  }
  impl_ = std::move(impl);
}

NodeId NodeObjective::node() const { return impl_->v; }
ClassId NodeObjective::label() const { return impl_->y; }

Vector NodeObjective::probs(const Vector& delta) const {
  const NormalizedAdjacency na = impl_->normalize(impl_->perturbed_row(delta));
  return impl_->run(na).probs.row(impl_->v).transpose();
}

double NodeObjective::loss(const Vector& delta, ClassId versus) const {
  const Vector p = probs(delta);
  if (versus >= 0) return p[impl_->y] - p[versus];
  return cw_loss(p, impl_->y);
}

NodeObjective::Evaluation NodeObjective::evaluate(const Vector& delta, ClassId versus) const {
  const Impl& s = *impl_;
  const GnnModel& m = *s.model;
  const NodeId n = s.graph->num_nodes;
  const NodeId v = s.v;
  const ClassId y = s.y;
  const Vector a_pert = s.perturbed_row(delta);
  const NormalizedAdjacency na = s.normalize(a_pert);
  const Pass pass = s.run(na);

  Evaluation out;
  out.probs = pass.probs.row(v).transpose();
  const Vector& p = out.probs;
  const ClassId c = versus >= 0 ? versus : best_wrong_class(p, y);
  out.gradient = Vector::Zero(n);
  if (c < 0) return out;
  out.loss = p[y] - p[c];

  // dL/dz_v for L = p_y - p_c through the softmax Jacobian.
  Vector g_zv = -p[y] * p + p[c] * p;
  g_zv[y] += p[y];
  g_zv[c] -= p[c];
  Matrix g_logits = Matrix::Zero(n, m.num_classes());
  g_logits.row(v) = g_zv.transpose();

  std::vector<std::pair<Matrix, Matrix>> terms;
  pass.backward(g_logits, nullptr, &terms);

  // dL/dS_ij = sum_k G_k[i] . H_k[j]; needed on the stored pattern (for the
  // degree path) and on row/column v (for the direct path).
  const SparseAdjacency& op = na.op;
  Vector degree_acc = Vector::Zero(n);
  for (NodeId i = 0; i < n; ++i) {
    for (SparseAdjacency::InnerIterator it(op, i); it; ++it) {
      double w = 0.0;
      for (const auto& [h, gk] : terms) w += gk.row(i).dot(h.row(it.col()));
      const double contrib = w * it.value();
      degree_acc[i] += contrib;
      degree_acc[it.col()] += contrib;
    }
  }
  Vector g_row_v = Vector::Zero(n);  // dL/dS_vu
  Vector g_col_v = Vector::Zero(n);  // dL/dS_uv
  for (const auto& [h, gk] : terms) {
    g_row_v.noalias() += h * gk.row(v).transpose();
    g_col_v.noalias() += gk * h.row(v).transpose();
  }
  const Vector& d = na.degrees;
  const Vector g_degree = (-0.5 * degree_acc.array() / d.array()).matrix();
  for (NodeId u = 0; u < n; ++u) {
    if (u == v) continue;
    const double g_entry = (g_row_v[u] + g_col_v[u]) / std::sqrt(d[v] * d[u]) + g_degree[v] + g_degree[u];
    out.gradient[u] = (1.0 - 2.0 * s.clean_row[u]) * g_entry;
  }
  if (!out.gradient.allFinite()) throw Error("row_gradient: non-finite gradient");
  return out;
}

double row_loss(const GnnModel& m, const Graph& g, NodeId v, const Vector& delta, ClassId versus) {
  return NodeObjective(m, g, v).loss(delta, versus);
}

Vector row_gradient(const GnnModel& m, const Graph& g, NodeId v, const Vector& delta, ClassId versus) {
  return NodeObjective(m, g, v).evaluate(delta, versus).gradient;
}

Vector fd_gradient(const std::function<double(const Vector&)>& loss, const Vector& x, double h) {
  if (!(h > 0.0)) throw Error("fd_gradient: step must be positive");
  Vector out(x.size());
  Vector probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    if (xi - h >= 0.0) {
      probe[i] = xi + h;
      const double up = loss(probe);
      probe[i] = xi - h;
      const double down = loss(probe);
      out[i] = (up - down) / (2.0 * h);
    } else {
      probe[i] = xi + h;
      const double up = loss(probe);
      probe[i] = xi;
      out[i] = (up - loss(probe)) / h;
    }
    probe[i] = xi;
  }
  return out;
}

Vector fd_grad_oracle(const GnnModel& m, const Graph& g, NodeId v, const Vector& delta, double h) {
  const ClassId y = g.labels[static_cast<std::size_t>(v)];
  const NodeId n = g.num_nodes;
  const Vector a = g.row(v);
  // The relaxed loss is rebuilt from a dense perturbed row and a fresh
  // normalization, independent of the reverse pass.
  auto loss = [&](const Vector& d) {
    Vector row = a + (Vector::Ones(n) - 2.0 * a).cwiseProduct(d);
    row[v] = 0.0;
    const Matrix probs = forward(m, normalize_adjacency(g, AdjacencyRow{v, row}), g.features).probs;
    return cw_loss(Vector(probs.row(v).transpose()), y);
  };
  Vector out = fd_gradient(loss, delta, h);
  out[v] = 0.0;
  return out;
}

std::string model_to_json(const GnnModel& m) {
  Json doc;
  doc["format"] = "mibtack-model";
  doc["version"] = 1;
  doc["arch"] = to_string(m.arch);
  doc["hidden"] = m.hidden;
  doc["hops"] = m.hops;
  doc["teleport"] = m.teleport;
  doc["train_config"] = {{"learning_rate", m.train_config.learning_rate},
                         {"weight_decay", m.train_config.weight_decay},
                         {"dropout", m.train_config.dropout},
                         {"max_epochs", m.train_config.max_epochs},
                         {"patience", m.train_config.patience},
                         {"seed", m.train_config.seed}};
  Json ws = Json::array();
  for (const auto& w : m.weights) ws.push_back(matrix_to_json(w));
  doc["weights"] = std::move(ws);
  return doc.dump() + "\n";
}

GnnModel model_from_json(const std::string& text) {
  try {
    const Json doc = Json::parse(text);
    if (doc.at("format").get<std::string>() != "mibtack-model") throw Error("checkpoint: unknown format tag");
    GnnModel m;
    m.arch = parse_arch(doc.at("arch").get<std::string>());
    m.hidden = doc.at("hidden").get<int>();
    m.hops = doc.at("hops").get<int>();
    m.teleport = doc.at("teleport").get<double>();
    const auto& tc = doc.at("train_config");
    m.train_config.learning_rate = tc.at("learning_rate").get<double>();
    m.train_config.weight_decay = tc.at("weight_decay").get<double>();
    m.train_config.dropout = tc.at("dropout").get<double>();
    m.train_config.max_epochs = tc.at("max_epochs").get<int>();
    m.train_config.patience = tc.at("patience").get<int>();
    m.train_config.seed = tc.at("seed").get<std::uint64_t>();
    for (const auto& w : doc.at("weights")) m.weights.push_back(matrix_from_json(w));
    m.validate();
    return m;
  } catch (const Json::exception& e) {
    throw Error(std::string("checkpoint parse failure: ") + e.what());
  }
}

void save_model(const GnnModel& m, const std::string& path) {
  write_text_atomic(path, model_to_json(m));
}

GnnModel load_model(const std::string& path) {
  return model_from_json(read_text_file(path));
}

}  // namespace mibt
