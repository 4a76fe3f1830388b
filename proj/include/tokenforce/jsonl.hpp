#pragma once

#include "tokenforce/harness.hpp"

#include <json.hpp>

namespace tokenforce {

nlohmann::json target_to_json(const TargetSpec& target, std::uint64_t seed);
TargetSpec target_from_json(const nlohmann::json& j);

void write_targets_file(const std::string& path,
                        std::span<const TargetSpec> targets,
                        std::uint64_t seed);
std::vector<TargetSpec> read_targets_file(const std::string& path);

nlohmann::json result_to_json(const ResultRecord& record);
ResultRecord result_from_json(const nlohmann::json& j);

void append_result(std::ostream& out, const ResultRecord& record);

/// Reads a results file; throws with the 1-based line number on a corrupt
/// line.
std::vector<ResultRecord> read_results_file(const std::string& path);

nlohmann::json leaderboard_to_json(std::span<const LeaderboardEntry> entries);

}  // namespace tokenforce
