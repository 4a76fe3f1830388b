#pragma once

#include "tokenforce/harness.hpp"

#include <json.hpp>

#include <iosfwd>

namespace tokenforce {

/// Line-oriented sectioned key-value configuration.
///
///   # comment
///   [models.a]
///   layers = 2
///   width_schedule = [[0.0, 64], [0.4, 48]]
///
/// Section headers nest on dots; values are JSON scalars or lists, with bare
/// words read as strings. Parsing yields a json object tree.
nlohmann::json parse_config_text(const std::string& text);
nlohmann::json parse_config_file(const std::string& path);

/// Serializes a section tree back to config text; parse(write(x)) == x.
std::string write_config_text(const nlohmann::json& tree);

AttackConfig attack_config_from_json(const std::string& method,
                                     const nlohmann::json& section);
nlohmann::json attack_config_to_json(const AttackConfig& cfg);

VocabSpec vocab_from_config(const nlohmann::json& tree);
ContextTemplate template_from_config(const nlohmann::json& tree);
ModelSpec model_spec_from_config(const std::string& id,
                                 const nlohmann::json& section,
                                 const VocabSpec& vocab);

struct TargetsSettings {
  int length = 10;
  int count = 10;
  std::uint64_t sample_seed = 0;
  int train_count = 0;
  std::uint64_t split_seed = 0;
};
TargetsSettings targets_settings_from_config(const nlohmann::json& tree);

/// Builds the full plan from a config tree plus the sampled or loaded
/// target set (split applied here).
ExperimentPlan plan_from_config(const nlohmann::json& tree,
                                std::vector<TargetSpec> all_targets);

struct SweepSettings {
  std::string method;
  std::vector<std::pair<std::string, std::vector<double>>> grid;
  int trials = 1;
  std::uint64_t seed = 0;
};
SweepSettings sweep_settings_from_config(const nlohmann::json& tree);

}  // namespace tokenforce
