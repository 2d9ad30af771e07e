#include <cmath>
#include <sstream>

#include <json.hpp>

#include "mibtack/harness.hpp"
#include "mibtack/io.hpp"

namespace mibt {

namespace {

using Json = nlohmann::ordered_json;

constexpr const char* kFormat = "mibtack-report";
constexpr int kVersion = 1;

Json outcome_to_json(const AttackOutcome& o) {
  Json flips = Json::array();
  for (const Flip& f : o.flips) flips.push_back({{"u", f.node + 1}, {"op", f.add ? "add" : "delete"}});
  return {{"record", "target"},
          {"node", o.node + 1},
          {"method", o.method},
          {"success", o.success},
          {"min_budget", o.min_budget},
          {"flips", flips},
          {"margin_before", o.margin_before},
          {"margin_after", o.margin_after},
          {"iterations", o.iterations},
          {"init_class", o.init_class >= 0 ? Json(o.init_class + 1) : Json(nullptr)}};
}

AttackOutcome outcome_from_json(const Json& j) {
  AttackOutcome o;
  o.node = j.at("node").get<NodeId>() - 1;
  o.method = j.at("method").get<std::string>();
  o.success = j.at("success").get<bool>();
  o.min_budget = j.at("min_budget").get<Eigen::Index>();
  for (const Json& f : j.at("flips")) {
    const std::string op = f.at("op").get<std::string>();
    if (op != "add" && op != "delete") throw Error("report: unknown flip op '" + op + "'");
    o.flips.push_back({f.at("u").get<NodeId>() - 1, op == "add"});
  }
  o.margin_before = j.at("margin_before").get<double>();
  o.margin_after = j.at("margin_after").get<double>();
  o.iterations = j.at("iterations").get<int>();
  o.init_class = j.at("init_class").is_null() ? -1 : j.at("init_class").get<ClassId>() - 1;
  if (o.node < 0) throw Error("report: node ids are 1-based");
  if (static_cast<std::size_t>(o.min_budget) != o.flips.size()) throw Error("report: min_budget disagrees with flips");
  return o;
}

std::string format_double(double x) {
  std::ostringstream ss;
  ss.precision(17);
  ss << x;
  return ss.str();
}

}  // namespace

std::string report_to_jsonl(const Report& r) {
  const ReportHeader& h = r.header;
  Json header = {{"record", "header"},
                 {"format", kFormat},
                 {"version", kVersion},
                 {"method", h.method},
                 {"arch", h.arch},
                 {"seed", h.seed},
                 {"num_nodes", h.num_nodes},
                 {"num_edges", h.num_edges},
                 {"alpha0", h.alpha0},
                 {"beta0", h.beta0},
                 {"patience", h.patience},
                 {"gamma", h.gamma},
                 {"init", h.init},
                 {"gradient", h.discrete_gradient ? "discrete" : "relaxed"},
                 {"jaccard_threshold", h.jaccard_threshold ? Json(*h.jaccard_threshold) : Json(nullptr)},
                 {"only_correct", h.only_correct}};
  std::string out = header.dump() + "\n";
  for (const auto& o : r.records) out += outcome_to_json(o).dump() + "\n";
  const Summary& s = r.summary;
  const Json summary = {{"record", "summary"},
                        {"num_targets", s.num_targets},
                        {"successes", s.successes},
                        {"acc", s.accuracy},
                        {"tb", s.total_budget},
                        {"mean_abs_margin", s.mean_abs_margin}};
  out += summary.dump() + "\n";
  return out;
}

Report report_from_jsonl(const std::string& text) {
  Report r;
  std::istringstream in(text);
  std::string line;
  bool have_header = false, have_summary = false;
  Summary stored;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (have_summary) throw Error("report: records after the summary");
      const Json j = Json::parse(line);
      const std::string kind = j.at("record").get<std::string>();
      if (kind == "header") {
        if (have_header) throw Error("report: duplicate header");
        if (j.at("format") != kFormat || j.at("version") != kVersion) throw Error("report: unsupported format");
        ReportHeader& h = r.header;
        h.method = j.at("method").get<std::string>();
        h.arch = j.at("arch").get<std::string>();
        h.seed = j.at("seed").get<std::uint64_t>();
        h.num_nodes = j.at("num_nodes").get<NodeId>();
        h.num_edges = j.at("num_edges").get<Eigen::Index>();
        h.alpha0 = j.at("alpha0").get<double>();
        h.beta0 = j.at("beta0").get<double>();
        h.patience = j.at("patience").get<int>();
        h.gamma = j.at("gamma").get<double>();
        h.init = j.at("init").get<bool>();
        const std::string gradient = j.at("gradient").get<std::string>();
        if (gradient != "discrete" && gradient != "relaxed") throw Error("report: unknown gradient mode " + gradient);
        h.discrete_gradient = gradient == "discrete";
        if (!j.at("jaccard_threshold").is_null()) h.jaccard_threshold = j.at("jaccard_threshold").get<double>();
        h.only_correct = j.at("only_correct").get<bool>();
        have_header = true;
      } else if (kind == "target") {
        if (!have_header) throw Error("report: target record before the header");
        r.records.push_back(outcome_from_json(j));
        if (r.records.back().node >= r.header.num_nodes) throw Error("report: node out of range");
      } else if (kind == "summary") {
        stored.num_targets = j.at("num_targets").get<std::size_t>();
        stored.successes = j.at("successes").get<std::size_t>();
        stored.accuracy = j.at("acc").get<double>();
        stored.total_budget = j.at("tb").get<long long>();
        stored.mean_abs_margin = j.at("mean_abs_margin").get<double>();
        have_summary = true;
      } else {
        throw Error("report: unknown record '" + kind + "'");
      }
    }
  } catch (const Json::exception& e) {
    throw Error(std::string("report parse failure: ") + e.what());
  }
  if (!have_header || !have_summary) throw Error("report: missing header or summary");
  r.summary = summarize(r.records);
  const bool close = std::abs(r.summary.mean_abs_margin - stored.mean_abs_margin) <= 1e-12;
  if (r.summary.num_targets != stored.num_targets || r.summary.successes != stored.successes ||
      r.summary.accuracy != stored.accuracy || r.summary.total_budget != stored.total_budget || !close) {
    throw Error("report: summary does not match the records");
  }
  return r;
}

void save_report(const Report& r, const std::string& path) { write_text_atomic(path, report_to_jsonl(r)); }

Report load_report(const std::string& path) { return report_from_jsonl(read_text_file(path)); }

std::string degree_table_csv(const DegreeFit& fit) {
  std::string out = "node,degree,robustness\n";
  for (const auto& p : fit.pairs) {
    out += std::to_string(p.node + 1) + "," + std::to_string(p.degree) + "," + std::to_string(p.robustness) + "\n";
  }
  return out;
}

std::string decile_table_csv(const std::vector<DecileRow>& rows) {
  std::string out = "decile,accuracy,mean_confidence\n";
  for (const auto& r : rows) {
    out += std::to_string(r.decile) + "," + format_double(r.accuracy) + "," + format_double(r.mean_confidence) + "\n";
  }
  return out;
}

std::string margin_table_csv(const std::vector<AttackOutcome>& outcomes) {
  std::string out = "node,margin_clean,margin_attacked\n";
  for (const auto& o : outcomes) {
    out += std::to_string(o.node + 1) + "," + format_double(o.margin_before) + "," + format_double(o.margin_after) +
           "\n";
  }
  return out;
}

}  // namespace mibt
