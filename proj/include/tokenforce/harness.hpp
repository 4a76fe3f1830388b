#pragma once

#include "tokenforce/attacks.hpp"
#include "tokenforce/toylm.hpp"

#include <functional>
#include <map>
#include <optional>

namespace tokenforce {

struct ModelSpec {
  std::string id;
  ToyArch arch;
  std::uint64_t seed = 0;
  bool held_out = false;
};

/// A full experiment: models x methods x targets x seeds under one budget.
struct ExperimentPlan {
  std::vector<ModelSpec> models;
  ContextTemplate tmpl;
  bool restricted = false;  // restrict suffixes to non-control ids
  std::vector<TargetSpec> train_targets;
  std::vector<TargetSpec> held_out_targets;
  std::vector<AttackConfig> methods;
  Flops budget = 0;
  int seeds_per_run = 1;
  std::uint64_t base_seed = 0;

  void validate() const;
  SearchSpace search_space(const VocabSpec& vocab) const;
};

struct RunKey {
  std::string method;
  std::string model_id;
  std::string target_id;
  int seed_index = 0;

  std::string to_string() const;
};

/// Per-run RNG seed: FNV-1a of "method\0model\0target\0seed_index" mixed
/// with the plan's base seed, so concurrency cannot perturb results.
std::uint64_t derive_run_seed(const RunKey& key, std::uint64_t base_seed);

/// One persisted line of a results file: an outcome or a first-class failure.
struct ResultRecord {
  RunKey key;
  std::string split;  // "train" | "held_out"
  AttackOutcome outcome;
  std::string error;  // nonempty marks a failed run

  bool failed() const { return !error.empty(); }
};

/// Deterministic disjoint split of targets into (train, held_out).
std::pair<std::vector<TargetSpec>, std::vector<TargetSpec>> split_targets(
    std::vector<TargetSpec> all, int train_count, std::uint64_t seed);

using RunCallback = std::function<void(const ResultRecord&)>;

struct PlanProgress {
  int executed = 0;
  int skipped = 0;
  int failed = 0;
};

/// Executes every (method, model, target, seed) job with a fresh meter,
/// appending one JSON line per record to results_path. Jobs already present
/// in the file are skipped, so reruns are idempotent. Single failures become
/// failure records and the plan continues.
PlanProgress run_plan(const ExperimentPlan& plan,
                      const std::string& results_path, int parallelism = 1,
                      const RunCallback& on_result = nullptr);

/// In-memory variant used by tests and the sweep.
std::vector<ResultRecord> run_plan_in_memory(const ExperimentPlan& plan,
                                             std::span<const TargetSpec> targets,
                                             std::string_view split,
                                             std::span<const ModelSpec> models);

/// Re-verifies every successful record's best_loss against the naive scorer;
/// returns the worst absolute deviation.
double verify_results(const ExperimentPlan& plan,
                      std::span<const ResultRecord> records);

struct AsrReport {
  double asr = 0.0;
  std::vector<std::pair<std::string, bool>> per_target;
};

/// Greedy-decode attack success over targets, using each target's best-loss
/// run for the given (method, model).
AsrReport measure_asr(std::span<const ResultRecord> results,
                      const std::string& method, const LanguageModel& model,
                      const std::string& model_id, const ContextTemplate& tmpl,
                      const SearchSpace* space,
                      std::span<const TargetSpec> targets);

struct LeaderboardEntry {
  std::string method;
  std::map<std::string, double> model_mean;  // per-model mean held-out loss
  std::map<std::string, double> model_std;   // population std
  std::map<std::string, double> model_rank;  // 1-based, average-rank ties
  double median_rank = 0.0;
  double mean_loss = 0.0;  // pooled over all held-out runs
  std::optional<double> asr;
};

/// Per-model mean/std and ranks over held-out targets, ordered by median
/// rank then mean loss. Throws naming the hole on incomplete coverage.
std::vector<LeaderboardEntry> build_leaderboard(
    std::span<const ResultRecord> results,
    std::span<const std::string> model_ids);

std::string leaderboard_table(std::span<const LeaderboardEntry> entries);

/// A named scalar override applied to one method's config, e.g.
/// {"learning_rate", 20} on adc_lsgm.
using ParamOverride = std::pair<std::string, double>;

struct SweepTrial {
  std::vector<ParamOverride> overrides;
  AttackConfig config;
  double mean_train_loss = 0.0;
};

struct SweepResult {
  AttackConfig best;
  std::vector<SweepTrial> trials;
  int best_index = 0;
};

/// Applies a named scalar parameter to an attack config; throws on unknown
/// names so config typos fail loudly.
void apply_param(AttackConfig& cfg, const std::string& name, double value);

/// Grid sweep over the named parameter value lists. Trials are a seeded
/// shuffle of the cartesian product (all of it when trials covers the grid);
/// each trial runs the full train-split plan on non-held-out models and is
/// scored by mean train loss. Held-out targets and models are never read.
SweepResult sweep(const ExperimentPlan& plan, const std::string& method,
                  const std::vector<std::pair<std::string, std::vector<double>>>&
                      grid,
                  int trials, std::uint64_t seed);

}  // namespace tokenforce
