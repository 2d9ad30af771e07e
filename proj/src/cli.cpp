#include "mibtack/cli.hpp"

#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "mibtack/harness.hpp"
#include "mibtack/io.hpp"

namespace mibt {

namespace {

using Json = nlohmann::ordered_json;

struct GraphArgs {
  std::string path;
  std::string format = "json";
  bool identity_features = false;
  bool no_lcc = false;

  void add(CLI::App* app) {
    app->add_option("--graph", path, "Graph file (canonical JSON or CSV edge list); the SBM benchmark if omitted");
    app->add_option("--graph-format", format, "Graph file format")->check(CLI::IsMember({"json", "csv"}));
    app->add_flag("--identity-features", identity_features, "Use one-hot node ids as features");
    app->add_flag("--no-lcc", no_lcc, "Keep the whole graph instead of its largest connected component");
  }

  GraphSource source(std::uint64_t split_seed) const {
    GraphSource s;
    s.path = path;
    s.format = format == "csv" ? GraphFormat::EdgeListCsv : GraphFormat::CanonicalJson;
    s.load.identity_features = identity_features;
    s.load.split_seed = split_seed;
    s.largest_component = !no_lcc;
    return s;
  }
};

struct AttackArgs {
  GraphArgs graph;
  std::string checkpoint;
  std::string arch = "gcn";
  double alpha = 1.0;
  double beta = 0.1;
  int patience = 800;
  double gamma = 0.0;
  int targets = 50;
  std::uint64_t seed = 0;
  std::optional<double> mask_jaccard;
  bool no_init = false;
  bool relaxed_gradient = false;
  bool only_correct = false;
  int workers = 0;
  std::string out;
  // baseline only
  std::string kind = "fga";
  int flip_cap = 1000;
  int pgd_iters = 200;

  void add(CLI::App* app, bool baseline) {
    graph.add(app);
    app->add_option("--checkpoint", checkpoint, "Trained model; trains one when omitted");
    app->add_option("--model", arch, "Architecture to train")->check(CLI::IsMember({"gcn", "sgc", "appnp"}));
    app->add_option("--gamma", gamma, "Confidence margin")->check(CLI::NonNegativeNumber);
    app->add_option("--targets", targets, "Number of target nodes")->check(CLI::PositiveNumber);
    app->add_option("--seed", seed, "Seed for training, splits and target sampling");
    app->add_option("--mask-jaccard", mask_jaccard, "Only add edges with feature Jaccard similarity >= this")
        ->check(CLI::Range(0.0, 1.0));
    app->add_flag("--only-correct", only_correct, "Sample only targets the model classifies correctly");
    app->add_option("--workers", workers, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
    app->add_option("--out", out, "Report path (stdout when omitted)");
    if (baseline) {
      app->add_option("--kind", kind, "Baseline attack")
          ->check(CLI::IsMember({"rand", "dice", "dice-t", "fga", "pgd-fixed"}));
      app->add_option("--flip-cap", flip_cap, "Flip limit for greedy baselines")->check(CLI::PositiveNumber);
      app->add_option("--pgd-iters", pgd_iters, "Iterations of fixed-budget PGD")->check(CLI::PositiveNumber);
    } else {
      app->add_option("--alpha", alpha, "Initial perturbation step size")->check(CLI::PositiveNumber);
      app->add_option("--beta", beta, "Initial budget step size")->check(CLI::Range(0.0, 1.0));
      app->add_option("--patience", patience, "Iterations after the first crossing")->check(CLI::PositiveNumber);
      app->add_flag("--no-init", no_init, "Start from a zero perturbation");
      app->add_flag("--relaxed-gradient", relaxed_gradient,
                    "Take gradients at the relaxed perturbation instead of its discretization");
    }
  }

  ExperimentConfig config(bool baseline) const {
    ExperimentConfig c;
    c.source = graph.source(seed);
    c.arch = parse_arch(arch);
    c.model_path = checkpoint;
    c.method = baseline ? kind : "mibtack";
    c.attack.alpha0 = alpha;
    c.attack.beta0 = beta;
    c.attack.patience = patience;
    c.attack.gamma = gamma;
    c.attack.seed = seed;
    c.attack.init_mode = no_init ? InitMode::None : InitMode::OneStep;
    c.attack.discrete_gradient = !relaxed_gradient;
    c.baseline.gamma = gamma;
    c.baseline.seed = seed;
    c.baseline.flip_cap = flip_cap;
    c.baseline.pgd_iters = pgd_iters;
    c.jaccard_threshold = mask_jaccard;
    c.num_targets = targets;
    c.only_correct = only_correct;
    c.seed = seed;
    c.workers = workers;
    c.output_path = out;
    return c;
  }
};

void emit(const std::string& out, const std::string& text) {
  if (out.empty()) {
    std::cout << text;
  } else {
    write_text_atomic(out, text);
  }
}

void print_summary(const Summary& s) {
  std::cerr << "targets " << s.num_targets << "  successes " << s.successes << "  ACC " << s.accuracy << "  TB "
            << s.total_budget << "  mean|margin| " << s.mean_abs_margin << "  time " << s.runtime_seconds << "s\n";
}

int run_attack(const AttackArgs& args, bool baseline) {
  ExperimentConfig cfg = args.config(baseline);
  cfg.output_path.clear();
  const Report r = run_experiment(cfg);
  emit(args.out, report_to_jsonl(r));
  print_summary(r.summary);
  return 0;
}

Graph load_report_graph(const GraphArgs& ga, std::uint64_t seed, const Report& r) {
  Graph g = prepare_graph(ga.source(seed));
  if (g.num_nodes != r.header.num_nodes) throw Error("graph does not match the report (node counts differ)");
  return g;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Minimum-budget topology attacks on graph neural networks"};
  app.require_subcommand(1);

  // gen-data
  SbmParams sbm;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "Write a stochastic block model graph");
  gen->add_option("--nodes", sbm.num_nodes, "Node count")->check(CLI::PositiveNumber);
  gen->add_option("--blocks", sbm.num_blocks, "Blocks (classes)")->check(CLI::PositiveNumber);
  gen->add_option("--p-in", sbm.intra_block_edge_prob, "Edge probability inside a block")->check(CLI::Range(0.0, 1.0));
  gen->add_option("--p-out", sbm.inter_block_edge_prob, "Edge probability across blocks")->check(CLI::Range(0.0, 1.0));
  gen->add_option("--features", sbm.feature_dim, "Binary feature count")->check(CLI::PositiveNumber);
  gen->add_option("--signal", sbm.feature_signal, "Strength of the block signal in features");
  gen->add_option("--seed", sbm.seed, "Generator seed");
  gen->add_option("--out", gen_out, "Output graph (canonical JSON)")->required();

  // train
  GraphArgs train_graph;
  std::string train_arch = "gcn", train_out;
  std::uint64_t train_seed = 0;
  auto* tr = app.add_subcommand("train", "Train a model and write a checkpoint");
  train_graph.add(tr);
  tr->add_option("--model", train_arch, "Architecture")->check(CLI::IsMember({"gcn", "sgc", "appnp"}));
  tr->add_option("--seed", train_seed, "Training and split seed");
  tr->add_option("--out", train_out, "Checkpoint path")->required();

  AttackArgs attack_args, baseline_args;
  auto* at = app.add_subcommand("attack", "Minimum-budget attack on sampled targets");
  attack_args.add(at, false);
  auto* bl = app.add_subcommand("baseline", "Baseline attack on sampled targets");
  baseline_args.add(bl, true);

  // analyze
  GraphArgs an_graph;
  std::string an_report, an_checkpoint, an_arch = "gcn", an_out, an_format = "csv";
  std::uint64_t an_seed = 0;
  auto* an = app.add_subcommand("analyze", "Robustness tables from a report");
  an_graph.add(an);
  an->add_option("--report", an_report, "Attack report")->required();
  an->add_option("--checkpoint", an_checkpoint, "Trained model; retrained from --model/--seed when omitted");
  an->add_option("--model", an_arch, "Architecture to retrain")->check(CLI::IsMember({"gcn", "sgc", "appnp"}));
  an->add_option("--seed", an_seed, "Seed used for the attack run");
  an->add_option("--format", an_format, "Output format")->check(CLI::IsMember({"json", "csv"}));
  an->add_option("--out", an_out,
                 "Output path; csv writes <out>.degree.csv, <out>.deciles.csv and <out>.margins.csv");

  // poison
  GraphArgs po_graph;
  std::string po_report, po_arch = "gcn", po_out;
  std::uint64_t po_seed = 0;
  int po_max = 10;
  auto* po = app.add_subcommand("poison", "Retrain on each attacked graph and re-check the targets");
  po_graph.add(po);
  po->add_option("--report", po_report, "Attack report")->required();
  po->add_option("--model", po_arch, "Architecture to retrain")->check(CLI::IsMember({"gcn", "sgc", "appnp"}));
  po->add_option("--seed", po_seed, "Seed used for the attack run");
  po->add_option("--max-poison-targets", po_max, "Retrain for at most this many targets (0 = all)")
      ->check(CLI::NonNegativeNumber);
  po->add_option("--out", po_out, "Output JSON (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) {
      sbm.validate();
      save_graph(generate_sbm(sbm), gen_out);
      return 0;
    }
    if (*tr) {
      const Graph g = prepare_graph(train_graph.source(train_seed));
      const Arch arch = parse_arch(train_arch);
      TrainConfig tc = default_train_config(arch);
      tc.seed = train_seed;
      const GnnModel m = train(arch, g, tc);
      save_model(m, train_out);
      std::cerr << "test accuracy " << accuracy(predict(m, g), g, g.splits.test) << "\n";
      return 0;
    }
    if (*at) return run_attack(attack_args, false);
    if (*bl) return run_attack(baseline_args, true);
    if (*an) {
      const Report r = load_report(an_report);
      const Graph g = load_report_graph(an_graph, an_seed, r);
      GnnModel m;
      if (!an_checkpoint.empty()) {
        m = load_model(an_checkpoint);
      } else {
        const Arch arch = parse_arch(an_arch);
        TrainConfig tc = default_train_config(arch);
        tc.seed = an_seed;
        m = train(arch, g, tc);
      }
      const DegreeFit fit = robustness_vs_degree(r.records, g);
      const std::vector<DecileRow> deciles = robustness_deciles(r.records, m, g);
      if (an_format == "csv") {
        if (an_out.empty()) {
          std::cout << degree_table_csv(fit) << "\n" << decile_table_csv(deciles) << "\n" << margin_table_csv(r.records);
        } else {
          write_text_atomic(an_out + ".degree.csv", degree_table_csv(fit));
          write_text_atomic(an_out + ".deciles.csv", decile_table_csv(deciles));
          write_text_atomic(an_out + ".margins.csv", margin_table_csv(r.records));
        }
      } else {
        Json doc;
        doc["slope"] = fit.slope ? Json(*fit.slope) : Json(nullptr);
        doc["intercept"] = fit.intercept ? Json(*fit.intercept) : Json(nullptr);
        doc["pairs"] = Json::array();
        for (const auto& p : fit.pairs) doc["pairs"].push_back({{"node", p.node + 1}, {"degree", p.degree}, {"robustness", p.robustness}});
        doc["deciles"] = Json::array();
        for (const auto& d : deciles) {
          doc["deciles"].push_back({{"decile", d.decile}, {"size", d.size}, {"accuracy", d.accuracy},
                                    {"mean_confidence", d.mean_confidence}});
        }
        doc["margins"] = Json::array();
        for (const auto& o : r.records) {
          doc["margins"].push_back({{"node", o.node + 1}, {"margin_clean", o.margin_before},
                                    {"margin_attacked", o.margin_after}});
        }
        emit(an_out, doc.dump(2) + "\n");
      }
      if (fit.slope) {
        std::cerr << "robustness ~ " << *fit.slope << " * degree + " << *fit.intercept << "\n";
      } else {
        std::cerr << "robustness vs degree: slope undefined (all degrees equal)\n";
      }
      return 0;
    }
    if (*po) {
      const Report r = load_report(po_report);
      const Graph g = load_report_graph(po_graph, po_seed, r);
      const Arch arch = parse_arch(po_arch);
      TrainConfig tc = default_train_config(arch);
      tc.seed = po_seed;
      const std::optional<double> acc = poison_eval(g, r.records, arch, tc, po_max);
      const Json doc = {{"gamma", r.header.gamma},
                        {"poisoned_acc", acc ? Json(*acc) : Json(nullptr)},
                        {"max_poison_targets", po_max}};
      emit(po_out, doc.dump() + "\n");
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace mibt
