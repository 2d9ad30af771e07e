#include "mibtack/baselines.hpp"

#include <cmath>

namespace mibt {

std::string to_string(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::Rand: return "rand";
    case BaselineKind::Dice: return "dice";
    case BaselineKind::DiceT: return "dice-t";
    case BaselineKind::Fga: return "fga";
    case BaselineKind::PgdFixed: return "pgd-fixed";
  }
  return "unknown";
}

BaselineKind parse_baseline(const std::string& name) {
  if (name == "rand") return BaselineKind::Rand;
  if (name == "dice") return BaselineKind::Dice;
  if (name == "dice-t") return BaselineKind::DiceT;
  if (name == "fga") return BaselineKind::Fga;
  if (name == "pgd-fixed") return BaselineKind::PgdFixed;
  throw Error("unknown baseline: " + name);
}

void BaselineConfig::validate() const {
  if (flip_cap < 1) throw Error("BaselineConfig: flip_cap must be at least 1");
  if (pgd_iters < 1) throw Error("BaselineConfig: pgd_iters must be at least 1");
  if (!(gamma >= 0.0)) throw Error("BaselineConfig: gamma must be non-negative");
}

std::vector<ClassId> attacker_labels(const GnnModel& m, const Graph& g) {
  const Matrix probs = predict(m, g);
  std::vector<ClassId> labels(static_cast<std::size_t>(g.num_nodes));
  for (NodeId u = 0; u < g.num_nodes; ++u) labels[static_cast<std::size_t>(u)] = argmax_class(probs.row(u).transpose());
  for (const auto* part : {&g.splits.train, &g.splits.validation}) {
    for (const NodeId u : *part) labels[static_cast<std::size_t>(u)] = g.labels[static_cast<std::size_t>(u)];
  }
  return labels;
}

namespace {

AttackOutcome start(const GnnModel& m, const Graph& g, NodeId v, const BaselineConfig& cfg) {
  cfg.validate();
  AttackOutcome out;
  out.node = v;
  out.method = to_string(cfg.kind);
  out.margin_before = margin(m, g, v);
  out.margin_after = out.margin_before;
  out.success = out.margin_before < -cfg.gamma;
  return out;
}

/// Shared greedy driver: `pick` proposes the next coordinate (or -1 to stop).
template <typename Pick>
AttackOutcome greedy(const GnnModel& m, const Graph& g, NodeId v, const BaselineConfig& cfg, Pick&& pick) {
  AttackOutcome out = start(m, g, v, cfg);
  if (out.success) return out;
  const NodeObjective objective(m, g, v);
  Vector delta = Vector::Zero(g.num_nodes);
  bool succeeded = false;
  while (out.iterations < cfg.flip_cap) {
    const NodeId u = pick(delta);
    if (u < 0) break;
    if (delta[u] != 0.0) throw Error("greedy baseline proposed a repeated flip");
    delta[u] = 1.0;
    ++out.iterations;
    if (objective.loss(delta) < -cfg.gamma) {
      succeeded = true;
      break;
    }
  }
  finalize_outcome(m, g, delta, cfg.gamma, out);
  if (succeeded && !out.success) throw Error("baseline success was not reproduced by independent re-evaluation");
  return out;
}

}  // namespace

AttackOutcome attack_rand(const GnnModel& m, const Graph& g, NodeId v, const BaselineConfig& cfg) {
  const FeasibleMask feasible = feasible_flips(g, v, cfg.candidate_mask);
  std::vector<NodeId> order;
  for (NodeId u = 0; u < g.num_nodes; ++u) {
    if (feasible[u]) order.push_back(u);
  }
  Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(v)));
  rng.shuffle(order);
  std::size_t next = 0;
  return greedy(m, g, v, cfg, [&](const Vector&) { return next < order.size() ? order[next++] : NodeId{-1}; });
}

AttackOutcome attack_dice(const GnnModel& m, const Graph& g, NodeId v, const BaselineConfig& cfg, bool targeted) {
  const FeasibleMask feasible = feasible_flips(g, v, cfg.candidate_mask);
  const std::vector<ClassId> labels = attacker_labels(m, g);
  const ClassId y = g.labels[static_cast<std::size_t>(v)];
  ClassId target_class = -1;
  if (targeted) target_class = best_wrong_class(Vector(predict(m, g).row(v).transpose()), y);

  Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(v)));
  BaselineConfig local = cfg;
  local.kind = targeted ? BaselineKind::DiceT : BaselineKind::Dice;
  return greedy(m, g, v, local, [&](const Vector& delta) {
    std::vector<NodeId> deletions;
    std::vector<NodeId> additions;
    for (NodeId u = 0; u < g.num_nodes; ++u) {
      if (!feasible[u] || delta[u] != 0.0) continue;
      const ClassId lu = labels[static_cast<std::size_t>(u)];
      if (g.has_edge(v, u)) {
        if (lu == y) deletions.push_back(u);
      } else if (targeted ? lu == target_class : lu != y) {
        additions.push_back(u);
      }
    }
    const bool want_delete = rng.bernoulli(0.5);
    const auto& first = want_delete ? deletions : additions;
    const auto& second = want_delete ? additions : deletions;
    if (!first.empty()) return first[rng.below(first.size())];
    if (!second.empty()) return second[rng.below(second.size())];
    return NodeId{-1};
  });
}

AttackOutcome attack_fga(const GnnModel& m, const Graph& g, NodeId v, const BaselineConfig& cfg) {
  const FeasibleMask feasible = feasible_flips(g, v, cfg.candidate_mask);
  const NodeObjective objective(m, g, v);
  return greedy(m, g, v, cfg, [&](const Vector& delta) {
    const Vector grad = objective.evaluate(delta).gradient;
    // Raising an unflipped delta_u from 0 to 1 lowers the loss when its
    // partial derivative is negative.
    NodeId best = -1;
    for (NodeId u = 0; u < g.num_nodes; ++u) {
      if (!feasible[u] || delta[u] != 0.0 || !(grad[u] < 0.0)) continue;
      if (best < 0 || grad[u] < grad[best]) best = u;
    }
    return best;
  });
}

AttackOutcome attack_pgd_fixed(const GnnModel& m, const Graph& g, NodeId v, const BaselineConfig& cfg) {
  AttackOutcome out = start(m, g, v, cfg);
  if (out.success) return out;
  const FeasibleMask feasible = feasible_flips(g, v, cfg.candidate_mask);
  const Eigen::Index budget = std::max<Eigen::Index>(1, degree(g, v));
  const NodeObjective objective(m, g, v);
  Vector delta = Vector::Zero(g.num_nodes);
  for (int t = 0; t < cfg.pgd_iters; ++t) {
    const Vector grad = objective.evaluate(delta).gradient;
    const double step = cfg.pgd_alpha / std::sqrt(static_cast<double>(t + 1));
    delta = project_l0_box(pgd_step(delta, Vector(-grad), step), budget, feasible);
    ++out.iterations;
  }
  finalize_outcome(m, g, discretize(delta), cfg.gamma, out);
  return out;
}

AttackOutcome run_baseline(const GnnModel& m, const Graph& g, NodeId v, const BaselineConfig& cfg) {
  switch (cfg.kind) {
    case BaselineKind::Rand: return attack_rand(m, g, v, cfg);
    case BaselineKind::Dice: return attack_dice(m, g, v, cfg, false);
    case BaselineKind::DiceT: return attack_dice(m, g, v, cfg, true);
    case BaselineKind::Fga: return attack_fga(m, g, v, cfg);
    case BaselineKind::PgdFixed: return attack_pgd_fixed(m, g, v, cfg);
  }
  throw Error("unknown baseline kind");
}

}  // namespace mibt
