#include "tokenforce/jsonl.hpp"

#include <fstream>

namespace tokenforce {

using nlohmann::json;

json target_to_json(const TargetSpec& target, std::uint64_t seed) {
  return json{{"id", target.id}, {"tokens", target.tokens}, {"seed", seed}};
}

TargetSpec target_from_json(const json& j) {
  TargetSpec t;
  t.id = j.at("id").get<std::string>();
  t.tokens = j.at("tokens").get<TokenSeq>();
  return t;
}

void write_targets_file(const std::string& path,
                        std::span<const TargetSpec> targets,
                        std::uint64_t seed) {
  std::ofstream out(path);
  require(out.good(), "cannot open targets file " + path);
  for (const TargetSpec& t : targets) {
    out << target_to_json(t, seed).dump() << "\n";
  }
}

std::vector<TargetSpec> read_targets_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open targets file " + path);
  std::vector<TargetSpec> targets;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      targets.push_back(target_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      fail_input(path + ":" + std::to_string(line_no) +
                 ": corrupt target line: " + e.what());
    }
  }
  return targets;
}

json result_to_json(const ResultRecord& record) {
  json j{{"method", record.key.method},
         {"seed", record.key.seed_index},
         {"target_id", record.key.target_id},
         {"model_id", record.key.model_id},
         {"split", record.split}};
  if (record.failed()) {
    j["error"] = record.error;
    return j;
  }
  const AttackOutcome& o = record.outcome;
  j["best_suffix"] = o.best_suffix;
  j["best_loss"] = o.best_loss;
  j["flops_used"] = o.flops_used;
  j["steps"] = o.steps;
  json trace = json::array();
  for (const TracePoint& p : o.trace) {
    trace.push_back(json::array({p.flops, p.best_loss}));
  }
  j["trace"] = std::move(trace);
  return j;
}

ResultRecord result_from_json(const json& j) {
  ResultRecord record;
  record.key.method = j.at("method").get<std::string>();
  record.key.seed_index = j.at("seed").get<int>();
  record.key.target_id = j.at("target_id").get<std::string>();
  record.key.model_id = j.at("model_id").get<std::string>();
  record.split = j.value("split", "held_out");
  if (j.contains("error")) {
    record.error = j.at("error").get<std::string>();
    return record;
  }
  AttackOutcome& o = record.outcome;
  o.method = record.key.method;
  o.model_id = record.key.model_id;
  o.target_id = record.key.target_id;
  o.best_suffix = j.at("best_suffix").get<TokenSeq>();
  o.best_loss = j.at("best_loss").get<double>();
  o.flops_used = j.at("flops_used").get<Flops>();
  o.steps = j.at("steps").get<std::int64_t>();
  for (const auto& p : j.at("trace")) {
    o.trace.push_back({p.at(0).get<Flops>(), p.at(1).get<double>()});
  }
  return record;
}

void append_result(std::ostream& out, const ResultRecord& record) {
  out << result_to_json(record).dump() << "\n";
}

std::vector<ResultRecord> read_results_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open results file " + path);
  std::vector<ResultRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      records.push_back(result_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      fail_input(path + ":" + std::to_string(line_no) +
                 ": corrupt result line: " + e.what());
    }
  }
  return records;
}

json leaderboard_to_json(std::span<const LeaderboardEntry> entries) {
  json out = json::array();
  for (const LeaderboardEntry& e : entries) {
    json j{{"method", e.method},
           {"median_rank", e.median_rank},
           {"mean_loss", e.mean_loss},
           {"model_mean", e.model_mean},
           {"model_std", e.model_std},
           {"model_rank", e.model_rank}};
    if (e.asr.has_value()) j["asr"] = *e.asr;
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace tokenforce
