#include <doctest.h>

#include <cmath>
#include <limits>

#include "mibtack/attack.hpp"
#include "support.hpp"

using namespace mibt;
using testing::benchmark_graph;
using testing::benchmark_model;

namespace {

struct InitOracle {
  ClassId c_star = -1;
  NodeId flip = -1;
  double decrease = 0.0;
};

/// Every (wrong class, single flip) pair evaluated on rebuilt graphs.
InitOracle init_oracle(const GnnModel& m, const Graph& g, NodeId v) {
  const ClassId y = g.labels[static_cast<std::size_t>(v)];
  const Matrix clean = predict(m, g);
  InitOracle best;
  best.decrease = -std::numeric_limits<double>::infinity();
  for (ClassId c = 0; c < g.num_classes; ++c) {
    if (c == y) continue;
    double lowest = std::numeric_limits<double>::infinity();
    NodeId arg = -1;
    for (NodeId u = 0; u < g.num_nodes; ++u) {
      if (u == v) continue;
      const Matrix p = predict(m, with_flipped_edges(g, v, {u}));
      const double l = p(v, y) - p(v, c);
      if (l < lowest) {
        lowest = l;
        arg = u;
      }
    }
    const double decrease = (clean(v, y) - clean(v, c)) - lowest;
    if (decrease > best.decrease) best = {c, arg, decrease};
  }
  return best;
}

GnnModel toy_model(const Graph& g, std::uint64_t seed) {
  TrainConfig tc = default_train_config(Arch::GCN);
  tc.seed = seed;
  return train(Arch::GCN, g, tc);
}

/// First correctly classified benchmark test nodes.
std::vector<NodeId> correct_targets(const GnnModel& m, std::size_t count) {
  const Graph& g = benchmark_graph();
  const Matrix p = predict(m, g);
  std::vector<NodeId> out;
  for (NodeId v : g.splits.test) {
    if (out.size() == count) break;
    if (cw_loss(Vector(p.row(v).transpose()), g.labels[static_cast<std::size_t>(v)]) > 0) out.push_back(v);
  }
  return out;
}

AttackConfig quick_config() {
  AttackConfig cfg;
  cfg.patience = 100;
  return cfg;
}

}  // namespace

TEST_CASE("margin and success test") {
  const Graph& g = benchmark_graph();
  const GnnModel& m = benchmark_model(Arch::GCN);
  const Matrix p = predict(m, g);
  const Vector zero = Vector::Zero(g.num_nodes);
  for (NodeId v = 0; v < g.num_nodes; ++v) {
    const ClassId y = g.labels[static_cast<std::size_t>(v)];
    const double clean = cw_loss(Vector(p.row(v).transpose()), y);
    CHECK(margin(m, g, v) == doctest::Approx(clean).epsilon(1e-12));
    CHECK(margin(m, g, v, &zero) == doctest::Approx(clean).epsilon(1e-12));
    CHECK(is_success(m, g, v, zero, 0.0) == (clean < 0.0));
  }
}

TEST_CASE("success threshold applies gamma strictly") {
  const Graph& g = benchmark_graph();
  const GnnModel& m = benchmark_model(Arch::GCN);
  const NodeId v = correct_targets(m, 1).front();
  const AttackOutcome o = mibtack(m, g, v, quick_config());
  REQUIRE(o.success);
  const Vector d = delta_of(g, o.flips);
  const double l = margin(m, g, v, &d);
  CHECK(l == doctest::Approx(o.margin_after).epsilon(1e-12));
  CHECK(is_success(m, g, v, d, 0.0));
  CHECK(is_success(m, g, v, d, -l / 2));
  CHECK_FALSE(is_success(m, g, v, d, -l * 2));
  CHECK_FALSE(is_success(m, g, v, d, -l));
}

TEST_CASE("one-step initialization matches exhaustive enumeration on 6-node graphs") {
  int checked = 0;
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const Graph g = testing::toy_graph(6, 3, seed);
    const GnnModel m = toy_model(g, seed);
    for (NodeId v = 0; v < g.num_nodes; ++v) {
      const InitOracle want = init_oracle(m, g, v);
      const InitResult got = init_perturbation(m, g, v, feasible_flips(g, v, {}));
      CAPTURE(seed);
      CAPTURE(v);
      CHECK(got.c_star == want.c_star);
      CHECK(got.decrease == doctest::Approx(want.decrease).epsilon(1e-9));
      CHECK(nonzero_count(got.delta0) == 1);
      CHECK(got.delta0[want.flip] == 1.0);
      ++checked;
    }
  }
  CHECK(checked == 36);
}

TEST_CASE("with two classes the initial class is the only wrong one") {
  const Graph g = testing::toy_graph(10, 2, 3);
  const GnnModel m = toy_model(g, 3);
  for (NodeId v = 0; v < g.num_nodes; ++v) {
    CHECK(init_perturbation(m, g, v, feasible_flips(g, v, {})).c_star == 1 - g.labels[static_cast<std::size_t>(v)]);
  }
}

TEST_CASE("the initial class is not always the most confident wrong class") {
  bool found = false;
  for (std::uint64_t seed = 1; seed <= 20 && !found; ++seed) {
    const Graph g = testing::toy_graph(12, 4, seed);
    const GnnModel m = toy_model(g, seed);
    const Matrix p = predict(m, g);
    for (NodeId v = 0; v < g.num_nodes && !found; ++v) {
      const ClassId y = g.labels[static_cast<std::size_t>(v)];
      const ClassId top = best_wrong_class(Vector(p.row(v).transpose()), y);
      found = init_perturbation(m, g, v, feasible_flips(g, v, {})).c_star != top;
    }
  }
  CHECK(found);
}

TEST_CASE("empty candidate set") {
  const Graph g = testing::toy_graph(6, 2, 1);
  const GnnModel m = toy_model(g, 1);
  const FeasibleMask none = feasible_flips(g, 0, [](NodeId, NodeId) { return false; });
  CHECK(none.count() == 0);
  CHECK_THROWS_WITH_AS(init_perturbation(m, g, 0, none), doctest::Contains("empty candidate set"), Error);
}

TEST_CASE("already misclassified targets need no flips") {
  const Graph& g = benchmark_graph();
  const GnnModel& m = benchmark_model(Arch::SGC);
  const Matrix p = predict(m, g);
  NodeId wrong = -1;
  for (NodeId v = 0; v < g.num_nodes && wrong < 0; ++v) {
    if (cw_loss(Vector(p.row(v).transpose()), g.labels[static_cast<std::size_t>(v)]) < 0) wrong = v;
  }
  REQUIRE(wrong >= 0);
  const AttackOutcome o = mibtack(m, g, wrong, AttackConfig{});
  CHECK(o.success);
  CHECK(o.min_budget == 0);
  CHECK(o.flips.empty());
  CHECK(o.iterations == 0);
}

TEST_CASE("attack outcomes are verified, deterministic and respect the loop invariants") {
  const Graph& g = benchmark_graph();
  for (Arch arch : {Arch::GCN, Arch::APPNP}) {
    const GnnModel& m = benchmark_model(arch);
    for (NodeId v : correct_targets(m, 3)) {
      CAPTURE(v);
      Eigen::Index last_best = std::numeric_limits<Eigen::Index>::max();
      double prev_budget = 1.0;
      bool monotone = true, projected = true, boxed = true, annealed = true;
      double prev_alpha = std::numeric_limits<double>::infinity();
      const AttackConfig cfg = quick_config();
      const AttackOutcome o = mibtack(m, g, v, cfg, [&](const PerturbationState& st) {
        monotone = monotone && st.best_budget <= last_best;
        last_best = st.best_budget;
        projected = projected && nonzero_count(st.delta) <= integer_budget(prev_budget);
        prev_budget = st.budget;
        boxed = boxed && st.delta[v] == 0.0 && (st.delta.array() >= 0.0).all() && (st.delta.array() <= 1.0).all() &&
                st.budget >= 1.0;
        if (st.crossed) {
          annealed = annealed && st.alpha <= prev_alpha && st.remaining_patience < cfg.patience;
          prev_alpha = st.alpha;
        }
      });
      CHECK(monotone);
      CHECK(projected);
      CHECK(boxed);
      CHECK(annealed);
      REQUIRE(o.success);
      CHECK(static_cast<Eigen::Index>(o.flips.size()) == o.min_budget);
      CHECK(o.min_budget == last_best);
      CHECK(o.margin_after < 0.0);
      std::vector<NodeId> partners;
      for (const Flip& f : o.flips) {
        partners.push_back(f.node);
        CHECK(f.add == !g.has_edge(v, f.node));
      }
      CHECK(testing::oracle_margin(m, g, v, partners) == doctest::Approx(o.margin_after).epsilon(1e-12));
      CHECK(o.iterations <= cfg.iteration_cap());
      CHECK(mibtack(m, g, v, cfg) == o);
    }
  }
}

TEST_CASE("a Jaccard mask vetoes dissimilar additions") {
  const Graph& g = benchmark_graph();
  const GnnModel& m = benchmark_model(Arch::GCN);
  AttackConfig cfg = quick_config();
  const double threshold = 0.3;
  cfg.candidate_mask = jaccard_candidate_mask(g, threshold);
  for (NodeId v : correct_targets(m, 4)) {
    const AttackOutcome o = mibtack(m, g, v, cfg);
    for (const Flip& f : o.flips) {
      if (f.add) CHECK(jaccard_similarity(g, v, f.node) >= threshold);
    }
    const FeasibleMask feasible = feasible_flips(g, v, cfg.candidate_mask);
    for (NodeId u : g.neighbors(v)) CHECK(feasible[u]);
    CHECK_FALSE(feasible[v]);
  }
}

TEST_CASE("an attack without feasible flips fails cleanly") {
  const Graph& g = benchmark_graph();
  const GnnModel& m = benchmark_model(Arch::GCN);
  AttackConfig cfg = quick_config();
  cfg.candidate_mask = [](NodeId, NodeId) { return false; };
  const NodeId v = correct_targets(m, 1).front();
  const AttackOutcome o = mibtack(m, g, v, cfg);
  CHECK_FALSE(o.success);
  CHECK(o.flips.empty());
  CHECK(o.margin_after == o.margin_before);
}

TEST_CASE("a node that cannot be flipped within the cap reports failure") {
  const Graph& g = benchmark_graph();
  const GnnModel& m = benchmark_model(Arch::GCN);
  const NodeId v = correct_targets(m, 1).front();
  AttackConfig cfg;
  // Only one partner allowed, which is not enough for this node.
  const NodeId only = g.neighbors(v).front();
  cfg.candidate_mask = [only](NodeId, NodeId u) { return u == only; };
  cfg.max_total_iters = 20;
  const AttackOutcome o = mibtack(m, g, v, cfg);
  if (!o.success) {
    CHECK(o.flips.empty());
    CHECK(o.min_budget == 0);
    CHECK(o.iterations == 20);
  } else {
    CHECK(o.min_budget == 1);
  }
}

TEST_CASE("toy minimality against exhaustive search") {
  int compared = 0, equal = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const Graph g = testing::toy_graph(12, 3, seed);
    const GnnModel m = toy_model(g, seed);
    for (NodeId v = 0; v < g.num_nodes; ++v) {
      if (margin(m, g, v) <= 0) continue;
      const auto best = testing::exhaustive_min_budget(m, g, v, 3);
      if (!best) continue;
      const AttackOutcome o = mibtack(m, g, v, AttackConfig{});
      REQUIRE(o.success);
      CHECK(o.min_budget >= *best);  // never below the true minimum
      ++compared;
      equal += o.min_budget == *best ? 1 : 0;
    }
  }
  CHECK(compared >= 10);
  CHECK(equal * 10 >= compared * 7);
}

TEST_CASE("flip lists and perturbation vectors convert both ways") {
  const Graph& g = benchmark_graph();
  const NodeId v = 5;
  Vector d = Vector::Zero(g.num_nodes);
  d[g.neighbors(v).front()] = 1.0;
  d[(v + 50) % g.num_nodes] = 1.0;
  const std::vector<Flip> flips = flips_of(g, v, d);
  CHECK(flips.size() == 2);
  CHECK(delta_of(g, flips) == d);
}

TEST_CASE("attack configuration checks") {
  AttackConfig cfg;
  CHECK(cfg.iteration_cap() == 3200);
  cfg.alpha0 = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = AttackConfig{};
  cfg.patience = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = AttackConfig{};
  cfg.gamma = -0.1;
  CHECK_THROWS_AS(cfg.validate(), Error);
}
