#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mibtack/gnn.hpp"
#include "mibtack/perturbation.hpp"

namespace mibt {

/// Predicate over (target v, partner u): may the flip of edge (v, u) be used?
using CandidateMask = std::function<bool(NodeId, NodeId)>;

/// Additions need attribute Jaccard similarity >= threshold; deletions are
/// always allowed. The returned predicate references `g`.
CandidateMask jaccard_candidate_mask(const Graph& g, double threshold);

/// true for every u != v admitted by `mask` (or every u != v without one).
FeasibleMask feasible_flips(const Graph& g, NodeId v, const CandidateMask& mask);

enum class InitMode { OneStep, None };

struct AttackConfig {
  double alpha0 = 1.0;
  double beta0 = 0.1;
  int patience = 800;
  double gamma = 0.0;
  int max_total_iters = 0;  // 0 selects 4 * patience
  std::uint64_t seed = 0;
  CandidateMask candidate_mask;
  InitMode init_mode = InitMode::OneStep;
  /// Take each gradient at the discretized iterate, the graph the success
  /// test actually sees. When false it is taken at the relaxed iterate.
  bool discrete_gradient = true;

  void validate() const;
  int iteration_cap() const { return max_total_iters > 0 ? max_total_iters : 4 * patience; }
};

struct Flip {
  NodeId node = 0;
  bool add = true;
  bool operator==(const Flip&) const = default;
};

struct AttackOutcome {
  NodeId node = 0;
  std::string method = "mibtack";
  bool success = false;
  Eigen::Index min_budget = 0;
  std::vector<Flip> flips;
  double margin_before = 0.0;
  double margin_after = 0.0;
  int iterations = 0;
  ClassId init_class = -1;

  bool operator==(const AttackOutcome&) const = default;
};

/// Loop state of one dynamic-PGD run, exposed to observers after every
/// iteration.
struct PerturbationState {
  Vector delta;
  double budget = 1.0;
  double mu = 0.0;
  Vector best_delta;  // empty until the first discrete success
  Eigen::Index best_budget = std::numeric_limits<Eigen::Index>::max();
  bool crossed = false;
  int remaining_patience = 0;
  int iter = 0;
  double alpha = 0.0;
  double beta = 0.0;
  bool last_success = false;
};

using StateObserver = std::function<void(const PerturbationState&)>;

/// CW margin of node v, optionally after applying a binary flip vector.
double margin(const GnnModel& m, const Graph& g, NodeId v, const Vector* binary_delta = nullptr);

/// L(a + T(delta)) < -gamma for a binary flip vector.
bool is_success(const GnnModel& m, const Graph& g, NodeId v, const Vector& binary_delta, double gamma);

struct InitResult {
  ClassId c_star = -1;
  Vector delta0;
  double decrease = 0.0;
};

/// One-step initialization: for each wrong class c the single feasible flip
/// minimizing f_y - f_c, then the class whose best flip decreases that loss
/// the most. Throws Error("empty candidate set") without feasible flips.
InitResult init_perturbation(const GnnModel& m, const Graph& g, NodeId v, const FeasibleMask& feasible);

/// Minimum-budget attack on node v by dynamic projected gradient descent.
AttackOutcome mibtack(const GnnModel& m, const Graph& g, NodeId v, const AttackConfig& cfg,
                      const StateObserver& observer = {});

/// Flip list of a binary flip vector against the clean row of v.
std::vector<Flip> flips_of(const Graph& g, NodeId v, const Vector& binary_delta);
Vector delta_of(const Graph& g, const std::vector<Flip>& flips);

/// Margin of v on a graph rebuilt with the flips applied; shares no state
/// with the attack loop.
double verified_margin(const GnnModel& m, const Graph& g, NodeId v, const std::vector<Flip>& flips);

/// Fills flips/min_budget/margin_after from a binary flip vector and sets
/// success from an independent re-evaluation.
void finalize_outcome(const GnnModel& m, const Graph& g, const Vector& binary_delta, double gamma,
                      AttackOutcome& out);

}  // namespace mibt
