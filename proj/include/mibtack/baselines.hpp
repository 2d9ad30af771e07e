#pragma once

#include <cstdint>
#include <string>

#include "mibtack/attack.hpp"

namespace mibt {

enum class BaselineKind { Rand, Dice, DiceT, Fga, PgdFixed };

std::string to_string(BaselineKind kind);
BaselineKind parse_baseline(const std::string& name);

struct BaselineConfig {
  BaselineKind kind = BaselineKind::Fga;
  int flip_cap = 1000;
  int pgd_iters = 200;
  double pgd_alpha = 1.0;
  double gamma = 0.0;
  std::uint64_t seed = 0;
  CandidateMask candidate_mask;

  void validate() const;
};

/// Labels an attacker can use: ground truth on train/validation nodes, model
/// predictions elsewhere.
std::vector<ClassId> attacker_labels(const GnnModel& m, const Graph& g);

AttackOutcome attack_rand(const GnnModel& m, const Graph& g, NodeId v, const BaselineConfig& cfg);
AttackOutcome attack_dice(const GnnModel& m, const Graph& g, NodeId v, const BaselineConfig& cfg, bool targeted);
/// Gradient greedy: flips the steepest loss-decreasing unflipped coordinate.
AttackOutcome attack_fga(const GnnModel& m, const Graph& g, NodeId v, const BaselineConfig& cfg);
/// Fixed-budget PGD with budget max(1, degree(v)).
AttackOutcome attack_pgd_fixed(const GnnModel& m, const Graph& g, NodeId v, const BaselineConfig& cfg);

AttackOutcome run_baseline(const GnnModel& m, const Graph& g, NodeId v, const BaselineConfig& cfg);

}  // namespace mibt
