#include <doctest.h>

#include <algorithm>
#include <set>

#include "mibtack/baselines.hpp"
#include "support.hpp"

using namespace mibt;
using testing::benchmark_graph;
using testing::benchmark_model;

namespace {

std::vector<NodeId> correct_targets(const GnnModel& m, std::size_t count) {
  const Graph& g = benchmark_graph();
  std::vector<NodeId> out;
  for (NodeId v : g.splits.test) {
    if (out.size() == count) break;
    if (margin(m, g, v) > 0) out.push_back(v);
  }
  return out;
}

BaselineConfig config(BaselineKind kind) {
  BaselineConfig cfg;
  cfg.kind = kind;
  cfg.seed = 7;
  return cfg;
}

}  // namespace

TEST_CASE("baseline names round trip") {
  for (BaselineKind k : {BaselineKind::Rand, BaselineKind::Dice, BaselineKind::DiceT, BaselineKind::Fga,
                         BaselineKind::PgdFixed}) {
    CHECK(parse_baseline(to_string(k)) == k);
  }
  CHECK_THROWS_AS(parse_baseline("nettack"), Error);
}

TEST_CASE("FGA's first flip is the steepest coordinate of a finite-difference gradient") {
  const Graph& g = benchmark_graph();
  const GnnModel& m = benchmark_model(Arch::GCN);
  int agree_with_best_single = 0, total = 0;
  for (NodeId v : correct_targets(m, 5)) {
    BaselineConfig cfg = config(BaselineKind::Fga);
    cfg.flip_cap = 1;
    const AttackOutcome o = attack_fga(m, g, v, cfg);
    REQUIRE(o.iterations == 1);
    const Vector zero = Vector::Zero(g.num_nodes);
    const Vector fd = fd_grad_oracle(m, g, v, zero, 1e-6);
    Eigen::Index steepest = -1;
    for (NodeId u = 0; u < g.num_nodes; ++u) {
      if (u != v && (steepest < 0 || fd[u] < fd[steepest])) steepest = u;
    }
    REQUIRE(o.flips.size() == 1);
    CHECK(o.flips.front().node == steepest);
    CHECK(o.flips.front().add == !g.has_edge(v, o.flips.front().node));

    // How often the linearization also finds the truly best single flip.
    double best = margin(m, g, v);
    NodeId best_u = -1;
    for (NodeId u = 0; u < g.num_nodes; ++u) {
      if (u == v) continue;
      const double l = testing::oracle_margin(m, g, v, {u});
      if (l < best) {
        best = l;
        best_u = u;
      }
    }
    agree_with_best_single += best_u == steepest ? 1 : 0;
    ++total;
  }
  MESSAGE("FGA first flip equals best single flip on " << agree_with_best_single << "/" << total << " targets");
}

TEST_CASE("greedy baselines never repeat a flip and verify success") {
  const Graph& g = benchmark_graph();
  const GnnModel& m = benchmark_model(Arch::SGC);
  for (BaselineKind k : {BaselineKind::Fga, BaselineKind::Rand, BaselineKind::Dice, BaselineKind::DiceT}) {
    for (NodeId v : correct_targets(m, 3)) {
      CAPTURE(to_string(k));
      const AttackOutcome o = run_baseline(m, g, v, config(k));
      CHECK(o.method == to_string(k));
      std::set<NodeId> seen;
      for (const Flip& f : o.flips) CHECK(seen.insert(f.node).second);
      if (o.success) {
        CHECK(static_cast<Eigen::Index>(o.flips.size()) == o.min_budget);
        std::vector<NodeId> partners(seen.begin(), seen.end());
        CHECK(testing::oracle_margin(m, g, v, partners) < 0.0);
        CHECK(o.iterations == o.min_budget);
      }
    }
  }
}

TEST_CASE("DICE connects to other labels and disconnects from its own") {
  const Graph& g = benchmark_graph();
  const GnnModel& m = benchmark_model(Arch::GCN);
  const std::vector<ClassId> labels = attacker_labels(m, g);
  for (NodeId v : correct_targets(m, 4)) {
    const ClassId y = g.labels[static_cast<std::size_t>(v)];
    const AttackOutcome o = attack_dice(m, g, v, config(BaselineKind::Dice), false);
    for (const Flip& f : o.flips) {
      const ClassId lu = labels[static_cast<std::size_t>(f.node)];
      if (f.add) {
        CHECK(lu != y);
      } else {
        CHECK(lu == y);
      }
    }
  }
}

TEST_CASE("attacker labels reveal only train and validation ground truth") {
  const Graph& g = benchmark_graph();
  const GnnModel& m = benchmark_model(Arch::GCN);
  const std::vector<ClassId> labels = attacker_labels(m, g);
  const Matrix p = predict(m, g);
  for (NodeId u : g.splits.train) CHECK(labels[static_cast<std::size_t>(u)] == g.labels[static_cast<std::size_t>(u)]);
  for (NodeId u : g.splits.test) CHECK(labels[static_cast<std::size_t>(u)] == argmax_class(Vector(p.row(u).transpose())));
}

TEST_CASE("with two classes targeted DICE matches untargeted DICE") {
  const Graph g = testing::toy_graph(30, 2, 5);
  TrainConfig tc = default_train_config(Arch::GCN);
  tc.seed = 5;
  const GnnModel m = train(Arch::GCN, g, tc);
  for (NodeId v = 0; v < g.num_nodes; ++v) {
    AttackOutcome a = attack_dice(m, g, v, config(BaselineKind::Dice), false);
    AttackOutcome b = attack_dice(m, g, v, config(BaselineKind::DiceT), true);
    CHECK(b.method == "dice-t");
    b.method = a.method;
    CHECK(a == b);
  }
}

TEST_CASE("fixed-budget PGD stays within the degree budget") {
  const Graph& g = benchmark_graph();
  const GnnModel& m = benchmark_model(Arch::GCN);
  for (NodeId v : correct_targets(m, 4)) {
    BaselineConfig cfg = config(BaselineKind::PgdFixed);
    cfg.pgd_iters = 50;
    const AttackOutcome o = attack_pgd_fixed(m, g, v, cfg);
    CHECK(o.iterations == 50);
    CHECK(static_cast<Eigen::Index>(o.flips.size()) <= std::max<Eigen::Index>(1, degree(g, v)));
  }
}

TEST_CASE("fixed-budget PGD on an isolated node uses a budget of one") {
  Graph g = testing::toy_graph(12, 3, 2);
  // Cut node 0 off from everything.
  std::vector<NodeId> partners;
  for (NodeId u : g.neighbors(0)) partners.push_back(u);
  g = with_flipped_edges(g, 0, partners);
  REQUIRE(degree(g, 0) == 0);
  TrainConfig tc = default_train_config(Arch::GCN);
  tc.seed = 2;
  const GnnModel m = train(Arch::GCN, g, tc);
  BaselineConfig cfg = config(BaselineKind::PgdFixed);
  cfg.pgd_iters = 30;
  const AttackOutcome o = attack_pgd_fixed(m, g, 0, cfg);
  CHECK(o.flips.size() <= 1);
}

TEST_CASE("random baseline is seeded and respects the flip cap") {
  const Graph& g = benchmark_graph();
  const GnnModel& m = benchmark_model(Arch::GCN);
  const NodeId v = correct_targets(m, 1).front();
  BaselineConfig cfg = config(BaselineKind::Rand);
  cfg.flip_cap = 3;
  const AttackOutcome a = attack_rand(m, g, v, cfg);
  CHECK(a == attack_rand(m, g, v, cfg));
  CHECK(a.iterations <= 3);
  if (!a.success) {
    // The attempted flips stay on record.
    CHECK(a.flips.size() == 3);
    CHECK(a.margin_after >= 0.0);
  }
  cfg.flip_cap = 0;
  CHECK_THROWS_AS(attack_rand(m, g, v, cfg), Error);
}

TEST_CASE("baselines leave misclassified targets alone") {
  const Graph& g = benchmark_graph();
  const GnnModel& m = benchmark_model(Arch::SGC);
  NodeId wrong = -1;
  for (NodeId v = 0; v < g.num_nodes && wrong < 0; ++v) {
    if (margin(m, g, v) < 0) wrong = v;
  }
  REQUIRE(wrong >= 0);
  for (BaselineKind k : {BaselineKind::Fga, BaselineKind::Rand, BaselineKind::PgdFixed}) {
    const AttackOutcome o = run_baseline(m, g, wrong, config(k));
    CHECK(o.success);
    CHECK(o.min_budget == 0);
    CHECK(o.iterations == 0);
  }
}
