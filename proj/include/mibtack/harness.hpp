#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mibtack/attack.hpp"
#include "mibtack/baselines.hpp"

namespace mibt {

/// Where the experiment graph comes from: a file, or the SBM generator when
/// `path` is empty.
struct GraphSource {
  std::string path;
  GraphFormat format = GraphFormat::CanonicalJson;
  LoadOptions load;
  SbmParams sbm;
  bool largest_component = true;
};

struct ExperimentConfig {
  GraphSource source;
  Arch arch = Arch::GCN;
  std::optional<TrainConfig> train;  // default_train_config(arch) seeded by `seed`
  std::string model_path;            // load a checkpoint instead of training

  std::string method = "mibtack";  // or a baseline name
  AttackConfig attack;
  BaselineConfig baseline;
  std::optional<double> jaccard_threshold;

  int num_targets = 50;
  bool only_correct = false;
  std::uint64_t seed = 0;
  int workers = 0;  // 0 uses the hardware concurrency

  std::string output_path;  // report written here when set

  void validate() const;
};

struct Summary {
  std::size_t num_targets = 0;
  std::size_t successes = 0;
  double accuracy = 0.0;  // fraction of targets still correctly classified
  long long total_budget = 0;
  double mean_abs_margin = 0.0;
  double runtime_seconds = 0.0;  // not serialized, so reports compare byte for byte

  bool operator==(const Summary& o) const;
};

struct ReportHeader {
  std::string method;
  std::string arch;
  std::uint64_t seed = 0;
  NodeId num_nodes = 0;
  Eigen::Index num_edges = 0;
  double alpha0 = 0.0;
  double beta0 = 0.0;
  int patience = 0;
  double gamma = 0.0;
  bool init = true;
  bool discrete_gradient = true;
  std::optional<double> jaccard_threshold;
  bool only_correct = false;

  bool operator==(const ReportHeader&) const = default;
};

struct Report {
  ReportHeader header;
  std::vector<AttackOutcome> records;  // sorted by node
  Summary summary;
};

struct Prepared {
  Graph graph;
  GnnModel model;
};

/// Graph loading (plus largest component) and model training or loading.
Graph prepare_graph(const GraphSource& source);
Prepared prepare(const ExperimentConfig& cfg);

/// Shuffles the test split with `seed`, optionally keeps the nodes the model
/// classifies correctly, and returns the first `count`, sorted.
std::vector<NodeId> sample_targets(const Graph& g, const GnnModel& m, int count, std::uint64_t seed,
                                   bool only_correct);

/// Runs one attack per target on up to `workers` threads. The result order
/// follows `targets`.
std::vector<AttackOutcome> attack_targets(const GnnModel& m, const Graph& g, const std::vector<NodeId>& targets,
                                          const ExperimentConfig& cfg);

Summary summarize(const std::vector<AttackOutcome>& records);
bool still_correct(const AttackOutcome& o);

Report run_experiment(const ExperimentConfig& cfg);
Report run_experiment(const ExperimentConfig& cfg, const Prepared& prepared);

/// Report file: a header line, one line per target and a summary line, each a
/// JSON object. Node ids are 1-based.
std::string report_to_jsonl(const Report& r);
/// Parses and checks that the summary matches the records.
Report report_from_jsonl(const std::string& text);
void save_report(const Report& r, const std::string& path);
Report load_report(const std::string& path);

/// For each successful outcome, retrains on g with its flips applied (seed
/// mixed with the node id) and checks the target. Returns the fraction still
/// classified correctly, nullopt without any successful outcome. `max_targets`
/// > 0 keeps only the first that many.
std::optional<double> poison_eval(const Graph& g, const std::vector<AttackOutcome>& outcomes, Arch arch,
                                  const TrainConfig& tc, int max_targets = 0);

struct GammaPoint {
  double gamma = 0.0;
  long long total_budget = 0;
  double accuracy = 0.0;
  std::optional<double> poisoned_accuracy;
};

/// Evasion attacks for each gamma, optionally followed by poison_eval on the
/// first `poison_targets` outcomes (0 skips it).
std::vector<GammaPoint> gamma_sweep(const ExperimentConfig& cfg, const Prepared& prepared,
                                    const std::vector<double>& gammas, int poison_targets);

struct DegreePair {
  NodeId node = 0;
  Eigen::Index degree = 0;
  Eigen::Index robustness = 0;
};

struct DegreeFit {
  std::optional<double> slope;  // nullopt when every degree is equal
  std::optional<double> intercept;
  std::vector<DegreePair> pairs;
};

/// Least-squares line of robustness against degree over successful outcomes.
DegreeFit robustness_vs_degree(const std::vector<AttackOutcome>& outcomes, const Graph& g);

struct DecileRow {
  int decile = 0;  // 1 = least robust
  std::size_t size = 0;
  double accuracy = 0.0;
  double mean_confidence = 0.0;
};

/// Ranks targets by robustness (failed attacks last, ties by node id), splits
/// them into 10 bins and reports clean accuracy and predicted-class
/// confidence per bin.
std::vector<DecileRow> robustness_deciles(const std::vector<AttackOutcome>& outcomes, const GnnModel& m,
                                          const Graph& g);

std::string degree_table_csv(const DegreeFit& fit);
std::string decile_table_csv(const std::vector<DecileRow>& rows);
std::string margin_table_csv(const std::vector<AttackOutcome>& outcomes);

}  // namespace mibt
