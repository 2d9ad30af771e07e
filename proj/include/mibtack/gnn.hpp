#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mibtack/graph.hpp"

namespace mibt {

enum class Arch { GCN, SGC, APPNP };

std::string to_string(Arch arch);
Arch parse_arch(const std::string& name);

struct TrainConfig {
  double learning_rate = 0.01;
  double weight_decay = 5e-4;
  double dropout = 0.5;
  int max_epochs = 200;
  int patience = 30;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Learning rate, weight decay and dropout used for each architecture.
TrainConfig default_train_config(Arch arch);

/// Architecture tag, shape parameters and weights.
///   GCN:   weights {D x hidden, hidden x C}
///   SGC:   weights {D x C}, `hops` propagation steps
///   APPNP: weights {D x hidden, hidden x C}, `hops` damped propagation steps
struct GnnModel {
  Arch arch = Arch::GCN;
  int hidden = 16;
  int hops = 2;
  double teleport = 0.1;
  std::vector<Matrix> weights;
  TrainConfig train_config;

  Eigen::Index input_dim() const { return weights.front().rows(); }
  Eigen::Index num_classes() const { return weights.back().cols(); }
  void validate() const;
};

bool operator==(const GnnModel& a, const GnnModel& b);

/// Untrained model with the default shape for `arch` and all-zero weights.
GnnModel make_model(Arch arch, Eigen::Index input_dim, Eigen::Index num_classes);

/// D^-1/2 (A' + I) D^-1/2 with weighted degrees d_u = 1 + sum_w A'_uw, where
/// A' is the base adjacency with the overlay mirrored into row and column
/// `overlay.owner`.
struct NormalizedAdjacency {
  SparseAdjacency op;
  Vector degrees;
};

NormalizedAdjacency normalize_adjacency(const Graph& base);
NormalizedAdjacency normalize_adjacency(const Graph& base, const AdjacencyRow& overlay);

struct ForwardTrace {
  std::vector<Matrix> pre;   // pre[0] unused; pre[l] is the l-th layer before activation
  std::vector<Matrix> post;  // post[0] == features
  NormalizedAdjacency adjacency;
  Matrix probs;
};

/// Inference-mode forward pass (no dropout). Throws Error naming the layer when
/// an activation turns non-finite.
ForwardTrace forward(const GnnModel& m, const NormalizedAdjacency& na, const Matrix& x);

/// Class probabilities for every node of g.
Matrix predict(const GnnModel& m, const Graph& g);
/// Class probabilities of node v with its row replaced by `perturbed_row`.
Vector node_probs(const GnnModel& m, const Graph& g, const AdjacencyRow& perturbed_row);
double accuracy(const Matrix& probs, const Graph& g, const std::vector<NodeId>& nodes);
ClassId argmax_class(const Eigen::Ref<const Vector>& probs);

struct TrainResult {
  GnnModel model;
  std::vector<double> train_loss;  // cross-entropy per epoch, before that epoch's update
  std::vector<double> val_accuracy;
  int best_epoch = 0;
};

/// Full-batch Adam on the mean training cross-entropy with L2 weight decay and
/// seeded dropout; keeps the weights of the best validation epoch.
TrainResult train_detailed(Arch arch, const Graph& g, const TrainConfig& tc);
GnnModel train(Arch arch, const Graph& g, const TrainConfig& tc);

/// Relaxed attack objective of one target node as a function of its flip
/// vector delta: a' = a_v + (1 - 2 a_v) * delta, mirrored into column v.
/// Loss is f_y - f_versus when `versus` >= 0, else the margin against the best
/// wrong class. Caches the adjacency-independent part of the network, so
/// repeated evaluations are cheaper than the free functions below. References
/// the model and graph, which must outlive it.
class NodeObjective {
 public:
  NodeObjective(const GnnModel& m, const Graph& g, NodeId v);

  struct Evaluation {
    double loss = 0.0;
    Vector gradient;  // dL/d delta, entry v is 0
    Vector probs;
  };

  NodeId node() const;
  ClassId label() const;
  Vector probs(const Vector& delta) const;
  double loss(const Vector& delta, ClassId versus = -1) const;
  /// Loss, exact reverse-mode gradient and probabilities in one pass.
  Evaluation evaluate(const Vector& delta, ClassId versus = -1) const;

 private:
  struct Impl;
  std::shared_ptr<const Impl> impl_;
};

/// Relaxed loss of node v as a function of its flip vector delta:
/// a' = a_v + (1 - 2 a_v) * delta mirrored into column v. With `versus` set the
/// loss is f_y - f_versus, otherwise the margin against the best wrong class.
double row_loss(const GnnModel& m, const Graph& g, NodeId v, const Vector& delta, ClassId versus = -1);

/// Exact reverse-mode gradient of row_loss with respect to delta. Entry v is 0.
Vector row_gradient(const GnnModel& m, const Graph& g, NodeId v, const Vector& delta, ClassId versus = -1);

inline Vector grad_wrt_row(const GnnModel& m, const Graph& g, NodeId v, const Vector& delta) {
  return row_gradient(m, g, v, delta);
}

/// Coordinate-wise finite differences: central where x - h >= 0, forward
/// otherwise.
Vector fd_gradient(const std::function<double(const Vector&)>& loss, const Vector& x, double h);
Vector fd_grad_oracle(const GnnModel& m, const Graph& g, NodeId v, const Vector& delta, double h);

std::string model_to_json(const GnnModel& m);
GnnModel model_from_json(const std::string& text);
void save_model(const GnnModel& m, const std::string& path);
GnnModel load_model(const std::string& path);

}  // namespace mibt
