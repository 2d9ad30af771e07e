#include "mibtack/attack.hpp"

#include <cmath>

namespace mibt {

CandidateMask jaccard_candidate_mask(const Graph& g, double threshold) {
  return [&g, threshold](NodeId v, NodeId u) {
    if (g.has_edge(v, u)) return true;
    return jaccard_similarity(g, v, u) >= threshold;
  };
}

FeasibleMask feasible_flips(const Graph& g, NodeId v, const CandidateMask& mask) {
  FeasibleMask f(g.num_nodes);
  for (NodeId u = 0; u < g.num_nodes; ++u) f[u] = u != v && (!mask || mask(v, u));
  return f;
}

void AttackConfig::validate() const {
  if (!(alpha0 > 0.0)) throw Error("AttackConfig: alpha must be positive");
  if (!(beta0 >= 0.0)) throw Error("AttackConfig: beta must be non-negative");
  if (patience < 1) throw Error("AttackConfig: patience must be at least 1");
  if (!(gamma >= 0.0)) throw Error("AttackConfig: gamma must be non-negative");
  if (max_total_iters < 0) throw Error("AttackConfig: negative iteration cap");
}

namespace {

AdjacencyRow perturbed(const Graph& g, NodeId v, const Vector& delta) {
  Vector row = apply_perturbation(g.row(v), delta);
  row[v] = 0.0;
  return {v, std::move(row)};
}

}  // namespace

double margin(const GnnModel& m, const Graph& g, NodeId v, const Vector* binary_delta) {
  const ClassId y = g.labels[static_cast<std::size_t>(v)];
  if (!binary_delta) return cw_loss(Vector(predict(m, g).row(v).transpose()), y);
  return cw_loss(node_probs(m, g, perturbed(g, v, *binary_delta)), y);
}

bool is_success(const GnnModel& m, const Graph& g, NodeId v, const Vector& binary_delta, double gamma) {
  return margin(m, g, v, &binary_delta) < -gamma;
}

InitResult init_perturbation(const GnnModel& m, const Graph& g, NodeId v, const FeasibleMask& feasible) {
  const ClassId y = g.labels[static_cast<std::size_t>(v)];
  const auto num_classes = static_cast<ClassId>(m.num_classes());
  const NodeObjective objective(m, g, v);
  const Vector clean = objective.probs(Vector::Zero(g.num_nodes));

  // Best single flip per wrong class, by exhaustive discrete evaluation.
  std::vector<double> best_loss(static_cast<std::size_t>(num_classes), std::numeric_limits<double>::infinity());
  std::vector<NodeId> best_flip(static_cast<std::size_t>(num_classes), -1);
  Vector delta = Vector::Zero(g.num_nodes);
  for (NodeId u = 0; u < g.num_nodes; ++u) {
    if (!feasible[u]) continue;
    delta[u] = 1.0;
    const Vector p = objective.probs(delta);
    delta[u] = 0.0;
    for (ClassId c = 0; c < num_classes; ++c) {
      if (c == y) continue;
      const double l = p[y] - p[c];
      if (l < best_loss[static_cast<std::size_t>(c)]) {
        best_loss[static_cast<std::size_t>(c)] = l;
        best_flip[static_cast<std::size_t>(c)] = u;
      }
    }
  }

  InitResult out;
  out.decrease = -std::numeric_limits<double>::infinity();
  for (ClassId c = 0; c < num_classes; ++c) {
    if (c == y || best_flip[static_cast<std::size_t>(c)] < 0) continue;
    const double decrease = (clean[y] - clean[c]) - best_loss[static_cast<std::size_t>(c)];
    if (decrease > out.decrease) {
      out.decrease = decrease;
      out.c_star = c;
    }
  }
  if (out.c_star < 0) throw Error("empty candidate set");
  out.delta0 = Vector::Zero(g.num_nodes);
  out.delta0[best_flip[static_cast<std::size_t>(out.c_star)]] = 1.0;
  return out;
}

std::vector<Flip> flips_of(const Graph& g, NodeId v, const Vector& binary_delta) {
  std::vector<Flip> flips;
  for (NodeId u = 0; u < binary_delta.size(); ++u) {
    if (binary_delta[u] != 0.0) flips.push_back({u, !g.has_edge(v, u)});
  }
  return flips;
}

Vector delta_of(const Graph& g, const std::vector<Flip>& flips) {
  Vector d = Vector::Zero(g.num_nodes);
  for (const auto& f : flips) d[f.node] = 1.0;
  return d;
}

double verified_margin(const GnnModel& m, const Graph& g, NodeId v, const std::vector<Flip>& flips) {
  std::vector<NodeId> partners;
  for (const auto& f : flips) {
    if (f.add == g.has_edge(v, f.node)) throw Error("flip direction does not match the clean graph");
    partners.push_back(f.node);
  }
  const Graph attacked = with_flipped_edges(g, v, partners);
  return cw_loss(Vector(predict(m, attacked).row(v).transpose()), g.labels[static_cast<std::size_t>(v)]);
}

void finalize_outcome(const GnnModel& m, const Graph& g, const Vector& binary_delta, double gamma,
                      AttackOutcome& out) {
  out.flips = flips_of(g, out.node, binary_delta);
  out.min_budget = static_cast<Eigen::Index>(out.flips.size());
  out.margin_after = verified_margin(m, g, out.node, out.flips);
  out.success = out.margin_after < -gamma;
}

AttackOutcome mibtack(const GnnModel& m, const Graph& g, NodeId v, const AttackConfig& cfg,
                      const StateObserver& observer) {
  cfg.validate();
  AttackOutcome out;
  out.node = v;
  out.method = "mibtack";
  out.margin_before = margin(m, g, v);
  if (out.margin_before < -cfg.gamma) {
    out.success = true;
    out.margin_after = out.margin_before;
    return out;
  }

  const FeasibleMask feasible = feasible_flips(g, v, cfg.candidate_mask);
  const Eigen::Index num_feasible = feasible.count();
  if (num_feasible == 0) {
    out.margin_after = out.margin_before;
    return out;
  }

  PerturbationState st;
  if (cfg.init_mode == InitMode::OneStep) {
    InitResult init = init_perturbation(m, g, v, feasible);
    out.init_class = init.c_star;
    st.delta = std::move(init.delta0);
  } else {
    st.delta = Vector::Zero(g.num_nodes);
  }
  st.budget = 1.0;
  st.alpha = cfg.alpha0;
  st.beta = cfg.beta0;
  st.remaining_patience = cfg.patience;

  Vector last_binary = Vector::Zero(g.num_nodes);
  const NodeObjective objective(m, g, v);
  const ClassId y = objective.label();
  int t_annealed = 0;
  double best_margin = -std::numeric_limits<double>::infinity();
  const int cap = cfg.iteration_cap();
  while (st.iter < cap) {
    ++st.iter;
    // A relaxed iterate is much smaller than its discretization, so the
    // relaxed gradient misjudges which flips still help once k gets large.
    const NodeObjective::Evaluation ev = objective.evaluate(cfg.discrete_gradient ? discretize(st.delta) : st.delta);
    const Vector stepped = pgd_step(st.delta, Vector(-ev.gradient), st.alpha);
    const Eigen::Index k = std::min(integer_budget(st.budget), num_feasible);
    auto proj = project_l0_box_with_threshold(stepped, k, feasible);
    st.delta = std::move(proj.delta);
    st.mu = proj.mu;

    last_binary = discretize(st.delta);
    const double l = cw_loss(objective.probs(last_binary), y);
    const bool success = l < -cfg.gamma;
    st.last_success = success;
    if (success) {
      // Equal-size solutions are ranked by how closely they cross.
      const Eigen::Index count = nonzero_count(last_binary);
      if (count < st.best_budget || (count == st.best_budget && l > best_margin)) {
        st.best_budget = count;
        st.best_delta = last_binary;
        best_margin = l;
      }
      st.crossed = true;
    }
    st.budget = std::min(update_budget(st.budget, success, st.beta), static_cast<double>(num_feasible));

    if (st.crossed) {
      ++t_annealed;
      st.remaining_patience = cfg.patience - t_annealed;
      st.alpha = cosine_anneal(cfg.alpha0, t_annealed, cfg.patience);
      st.beta = cosine_anneal(cfg.beta0, t_annealed, cfg.patience);
    }
    if (observer) observer(st);
    if (st.best_budget <= 1 || st.remaining_patience <= 0) break;
  }

  out.iterations = st.iter;
  if (st.best_delta.size() > 0) {
    finalize_outcome(m, g, st.best_delta, cfg.gamma, out);
    if (!out.success) throw Error("mibtack: success was not reproduced by independent re-evaluation");
  } else {
    out.success = false;
    out.margin_after = verified_margin(m, g, v, flips_of(g, v, last_binary));
  }
  return out;
}

}  // namespace mibt
