#include "mibtack/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

namespace mibt {

void ExperimentConfig::validate() const {
  if (num_targets < 1) throw Error("num_targets must be at least 1");
  if (workers < 0) throw Error("workers must be >= 0");
  if (method != "mibtack") parse_baseline(method);
  if (jaccard_threshold && !(*jaccard_threshold >= 0.0 && *jaccard_threshold <= 1.0)) {
    throw Error("jaccard threshold must lie in [0, 1]");
  }
  attack.validate();
  baseline.validate();
  if (train) train->validate();
  if (source.path.empty()) source.sbm.validate();
}

bool Summary::operator==(const Summary& o) const {
  // runtime is deliberately not compared
  return num_targets == o.num_targets && successes == o.successes && accuracy == o.accuracy &&
         total_budget == o.total_budget && mean_abs_margin == o.mean_abs_margin;
}

Graph prepare_graph(const GraphSource& source) {
  Graph g = source.path.empty() ? generate_sbm(source.sbm) : load_graph(source.path, source.format, source.load);
  return source.largest_component ? largest_connected_component(g) : g;
}

namespace {

TrainConfig train_config_for(const ExperimentConfig& cfg) {
  if (cfg.train) return *cfg.train;
  TrainConfig tc = default_train_config(cfg.arch);
  tc.seed = cfg.seed;
  return tc;
}

}  // namespace

Prepared prepare(const ExperimentConfig& cfg) {
  Prepared p{prepare_graph(cfg.source), {}};
  if (!cfg.model_path.empty()) {
    p.model = load_model(cfg.model_path);
    if (p.model.input_dim() != p.graph.feature_dim() || p.model.num_classes() != p.graph.num_classes) {
      throw Error("checkpoint does not match the graph");
    }
  } else {
    p.model = train(cfg.arch, p.graph, train_config_for(cfg));
  }
  return p;
}

std::vector<NodeId> sample_targets(const Graph& g, const GnnModel& m, int count, std::uint64_t seed,
                                   bool only_correct) {
  if (count < 1) throw Error("target count must be at least 1");
  std::vector<NodeId> pool = g.splits.test;
  std::sort(pool.begin(), pool.end());
  Rng rng(mix_seed(seed, 2));
  rng.shuffle(pool);
  if (only_correct) {
    const Matrix probs = predict(m, g);
    std::erase_if(pool, [&](NodeId v) {
      return cw_loss(Vector(probs.row(v).transpose()), g.labels[static_cast<std::size_t>(v)]) < 0.0;
    });
  }
  if (pool.size() < static_cast<std::size_t>(count)) {
    throw Error("requested " + std::to_string(count) + " targets but only " + std::to_string(pool.size()) +
                " are eligible");
  }
  pool.resize(static_cast<std::size_t>(count));
  std::sort(pool.begin(), pool.end());
  return pool;
}

std::vector<AttackOutcome> attack_targets(const GnnModel& m, const Graph& g, const std::vector<NodeId>& targets,
                                          const ExperimentConfig& cfg) {
  AttackConfig ac = cfg.attack;
  BaselineConfig bc = cfg.baseline;
  if (cfg.jaccard_threshold) {
    ac.candidate_mask = jaccard_candidate_mask(g, *cfg.jaccard_threshold);
    bc.candidate_mask = ac.candidate_mask;
  }
  const bool is_mibtack = cfg.method == "mibtack";
  if (!is_mibtack) bc.kind = parse_baseline(cfg.method);

  std::vector<AttackOutcome> out(targets.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < targets.size();) {
      try {
        out[i] = is_mibtack ? mibtack(m, g, targets[i], ac) : run_baseline(m, g, targets[i], bc);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::size_t workers = cfg.workers > 0 ? static_cast<std::size_t>(cfg.workers)
                                        : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, std::max<std::size_t>(1, targets.size()));
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

// An exact tie between the true class and another counts as correct.
bool still_correct(const AttackOutcome& o) { return o.margin_after >= 0.0; }

Summary summarize(const std::vector<AttackOutcome>& records) {
  Summary s;
  s.num_targets = records.size();
  std::size_t correct = 0;
  double margin_sum = 0.0;
  for (const auto& r : records) {
    if (r.success) ++s.successes;
    if (still_correct(r)) ++correct;
    s.total_budget += r.min_budget;
    margin_sum += std::abs(r.margin_after);
  }
  if (!records.empty()) {
    s.accuracy = static_cast<double>(correct) / static_cast<double>(records.size());
    s.mean_abs_margin = margin_sum / static_cast<double>(records.size());
  }
  return s;
}

Report run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  return run_experiment(cfg, prepare(cfg));
}

Report run_experiment(const ExperimentConfig& cfg, const Prepared& prepared) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<NodeId> targets =
      sample_targets(prepared.graph, prepared.model, cfg.num_targets, cfg.seed, cfg.only_correct);

  Report r;
  r.records = attack_targets(prepared.model, prepared.graph, targets, cfg);
  r.summary = summarize(r.records);
  r.summary.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  ReportHeader& h = r.header;
  h.method = cfg.method;
  h.arch = to_string(prepared.model.arch);
  h.seed = cfg.seed;
  h.num_nodes = prepared.graph.num_nodes;
  h.num_edges = prepared.graph.num_edges();
  h.gamma = cfg.method == "mibtack" ? cfg.attack.gamma : cfg.baseline.gamma;
  h.alpha0 = cfg.attack.alpha0;
  h.beta0 = cfg.attack.beta0;
  h.patience = cfg.attack.patience;
  h.init = cfg.attack.init_mode == InitMode::OneStep;
  h.discrete_gradient = cfg.attack.discrete_gradient;
  h.jaccard_threshold = cfg.jaccard_threshold;
  h.only_correct = cfg.only_correct;

  if (!cfg.output_path.empty()) save_report(r, cfg.output_path);
  return r;
}

std::optional<double> poison_eval(const Graph& g, const std::vector<AttackOutcome>& outcomes, Arch arch,
                                  const TrainConfig& tc, int max_targets) {
  std::vector<const AttackOutcome*> chosen;
  for (const auto& o : outcomes) {
    if (!o.success) continue;
    if (max_targets > 0 && chosen.size() >= static_cast<std::size_t>(max_targets)) break;
    chosen.push_back(&o);
  }
  if (chosen.empty()) return std::nullopt;

  std::size_t correct = 0;
  for (const AttackOutcome* o : chosen) {
    std::vector<NodeId> partners;
    for (const Flip& f : o->flips) partners.push_back(f.node);
    const Graph poisoned = with_flipped_edges(g, o->node, partners);
    TrainConfig node_tc = tc;
    node_tc.seed = mix_seed(tc.seed, static_cast<std::uint64_t>(o->node));
    try {
      const GnnModel retrained = train(arch, poisoned, node_tc);
      const Matrix probs = predict(retrained, poisoned);
      if (cw_loss(Vector(probs.row(o->node).transpose()), g.labels[static_cast<std::size_t>(o->node)]) >= 0.0) {
        ++correct;
      }
    } catch (const Error&) {
      // Diverged retraining counts as a failed attack.
      ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(chosen.size());
}

std::vector<GammaPoint> gamma_sweep(const ExperimentConfig& cfg, const Prepared& prepared,
                                    const std::vector<double>& gammas, int poison_targets) {
  std::vector<GammaPoint> out;
  for (const double gamma : gammas) {
    ExperimentConfig c = cfg;
    c.attack.gamma = gamma;
    c.baseline.gamma = gamma;
    c.output_path.clear();
    const Report r = run_experiment(c, prepared);
    GammaPoint p;
    p.gamma = gamma;
    p.total_budget = r.summary.total_budget;
    p.accuracy = r.summary.accuracy;
    if (poison_targets > 0) {
      p.poisoned_accuracy = poison_eval(prepared.graph, r.records, prepared.model.arch, train_config_for(cfg),
                                        poison_targets);
    }
    out.push_back(p);
  }
  return out;
}

DegreeFit robustness_vs_degree(const std::vector<AttackOutcome>& outcomes, const Graph& g) {
  DegreeFit fit;
  for (const auto& o : outcomes) {
    if (o.success) fit.pairs.push_back({o.node, degree(g, o.node), o.min_budget});
  }
  if (fit.pairs.size() < 2) throw Error("degree regression needs at least 2 successful outcomes");
  const auto n = static_cast<double>(fit.pairs.size());
  double mx = 0.0, my = 0.0;
  for (const auto& p : fit.pairs) {
    mx += static_cast<double>(p.degree);
    my += static_cast<double>(p.robustness);
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (const auto& p : fit.pairs) {
    const double dx = static_cast<double>(p.degree) - mx;
    sxx += dx * dx;
    sxy += dx * (static_cast<double>(p.robustness) - my);
  }
  if (sxx > 0.0) {
    fit.slope = sxy / sxx;
    fit.intercept = my - *fit.slope * mx;
  }
  return fit;
}

std::vector<DecileRow> robustness_deciles(const std::vector<AttackOutcome>& outcomes, const GnnModel& m,
                                          const Graph& g) {
  constexpr std::size_t bins = 10;
  if (outcomes.size() < bins) throw Error("decile analysis needs at least 10 outcomes");
  std::vector<const AttackOutcome*> order;
  for (const auto& o : outcomes) order.push_back(&o);
  std::sort(order.begin(), order.end(), [](const AttackOutcome* a, const AttackOutcome* b) {
    if (a->success != b->success) return a->success;
    if (a->min_budget != b->min_budget) return a->min_budget < b->min_budget;
    return a->node < b->node;
  });

  const Matrix probs = predict(m, g);
  std::vector<DecileRow> rows;
  const std::size_t base = order.size() / bins;
  const std::size_t extra = order.size() % bins;
  std::size_t pos = 0;
  for (std::size_t b = 0; b < bins; ++b) {
    DecileRow row;
    row.decile = static_cast<int>(b + 1);
    row.size = base + (b < extra ? 1 : 0);
    std::size_t correct = 0;
    double conf = 0.0;
    for (std::size_t i = 0; i < row.size; ++i, ++pos) {
      const NodeId v = order[pos]->node;
      const Vector p = probs.row(v).transpose();
      if (cw_loss(p, g.labels[static_cast<std::size_t>(v)]) >= 0.0) ++correct;
      conf += p.maxCoeff();
    }
    row.accuracy = static_cast<double>(correct) / static_cast<double>(row.size);
    row.mean_confidence = conf / static_cast<double>(row.size);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace mibt
