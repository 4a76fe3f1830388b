#include "tokenforce/analytic.hpp"
#include "tokenforce/configfile.hpp"
#include "tokenforce/jsonl.hpp"
#include "tokenforce/oracle.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace tf = tokenforce;
using nlohmann::json;

namespace {

struct GlobalArgs {
  std::string config;
  std::string out;
  int parallel = 1;
  bool dry_run = false;
  std::int64_t seed_override = -1;
};

json load_config(const GlobalArgs& args) {
  if (args.config.empty()) {
    throw std::invalid_argument("--config is required for this command");
  }
  return tf::parse_config_file(args.config);
}

void ensure_out_dir(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
}

std::vector<tf::TargetSpec> load_plan_targets(const json& tree,
                                              const tf::VocabSpec& vocab) {
  if (tree.contains("run") && tree.at("run").contains("targets_file")) {
    return tf::read_targets_file(
        tree.at("run").at("targets_file").get<std::string>());
  }
  const tf::TargetsSettings ts = tf::targets_settings_from_config(tree);
  return tf::sample_targets(vocab, ts.length, ts.count, ts.sample_seed);
}

int cmd_targets(const GlobalArgs& args) {
  const json tree = load_config(args);
  const tf::VocabSpec vocab = tf::vocab_from_config(tree);
  const tf::TargetsSettings ts = tf::targets_settings_from_config(tree);
  const std::uint64_t seed =
      args.seed_override >= 0 ? static_cast<std::uint64_t>(args.seed_override)
                              : ts.sample_seed;
  auto targets = tf::sample_targets(vocab, ts.length, ts.count, seed);
  if (args.out.empty()) {
    throw std::invalid_argument("targets: --out file is required");
  }
  ensure_out_dir(args.out);
  tf::write_targets_file(args.out, targets, seed);
  std::cout << "wrote " << targets.size() << " targets to " << args.out
            << "\n";
  return 0;
}

int cmd_attack(const GlobalArgs& args) {
  const json tree = load_config(args);
  const tf::VocabSpec vocab = tf::vocab_from_config(tree);
  tf::ExperimentPlan plan =
      tf::plan_from_config(tree, load_plan_targets(tree, vocab));
  if (args.seed_override >= 0) {
    plan.base_seed = static_cast<std::uint64_t>(args.seed_override);
  }
  plan.validate();

  const std::size_t jobs =
      plan.methods.size() * plan.models.size() *
      (plan.train_targets.size() + plan.held_out_targets.size()) *
      static_cast<std::size_t>(plan.seeds_per_run);
  if (args.dry_run) {
    std::cout << "dry run: " << jobs << " planned runs ("
              << plan.methods.size() << " methods x " << plan.models.size()
              << " models x "
              << plan.train_targets.size() + plan.held_out_targets.size()
              << " targets x " << plan.seeds_per_run << " seeds)\n";
    return 0;
  }
  if (args.out.empty()) {
    throw std::invalid_argument("attack: --out results file is required");
  }
  ensure_out_dir(args.out);

  auto print_result = [](const tf::ResultRecord& r) {
    if (r.failed()) {
      std::cout << r.key.method << " " << r.key.model_id << " "
                << r.key.target_id << " FAILED: " << r.error << "\n";
    } else {
      std::cout << r.key.method << " " << r.key.model_id << " "
                << r.key.target_id << " best_loss=" << r.outcome.best_loss
                << " flops_used=" << r.outcome.flops_used << "\n";
    }
  };
  const tf::PlanProgress progress =
      tf::run_plan(plan, args.out, args.parallel, print_result);
  std::cout << "executed " << progress.executed << ", skipped "
            << progress.skipped << ", failed " << progress.failed << "\n";
  return progress.failed > 0 ? 1 : 0;
}

int cmd_leaderboard(const GlobalArgs& args,
                    const std::vector<std::string>& results_files) {
  const json tree = load_config(args);
  if (results_files.empty()) {
    throw std::invalid_argument(
        "leaderboard: at least one results file is required");
  }
  std::vector<tf::ResultRecord> records;
  for (const std::string& path : results_files) {
    for (auto& r : tf::read_results_file(path)) {
      records.push_back(std::move(r));
    }
  }

  std::vector<std::string> model_ids;
  for (auto it = tree.at("models").begin(); it != tree.at("models").end();
       ++it) {
    model_ids.push_back(it.key());
  }
  auto board = tf::build_leaderboard(records, model_ids);

  const bool want_asr = tree.contains("leaderboard") &&
                        tree.at("leaderboard").value("asr", false);
  if (want_asr) {
    const tf::VocabSpec vocab = tf::vocab_from_config(tree);
    tf::ExperimentPlan plan =
        tf::plan_from_config(tree, load_plan_targets(tree, vocab));
    const tf::SearchSpace space =
        plan.search_space(plan.models.front().arch.vocab);
    for (auto& entry : board) {
      double total = 0.0;
      for (const tf::ModelSpec& spec : plan.models) {
        auto model = tf::build_model(spec.arch, spec.seed);
        total += tf::measure_asr(records, entry.method, *model, spec.id,
                                 plan.tmpl, &space, plan.held_out_targets)
                     .asr;
      }
      entry.asr = total / static_cast<double>(plan.models.size());
    }
  }

  const std::string table = tf::leaderboard_table(board);
  std::cout << table;
  if (!args.out.empty()) {
    ensure_out_dir(args.out);
    std::ofstream json_out(args.out + ".json");
    json_out << tf::leaderboard_to_json(board).dump(2) << "\n";
    std::ofstream text_out(args.out + ".txt");
    text_out << table;
    std::cout << "wrote " << args.out << ".json and " << args.out << ".txt\n";
  }
  return 0;
}

std::shared_ptr<tf::LanguageModel> oracle_model(const json& tree,
                                                const tf::VocabSpec& vocab) {
  const json& section = tree.at("oracle");
  const std::string name = section.value("model", std::string("uniform"));
  const double bonus = section.value("bonus", 30.0);
  if (name == "uniform") {
    return tf::make_uniform_lm(vocab.size, vocab.control_ids);
  }
  if (name == "pointer") {
    return tf::make_pointer_lm(vocab.size, bonus, vocab.control_ids);
  }
  if (name == "copy") {
    return tf::make_copy_lm(vocab.size, bonus, vocab.control_ids);
  }
  tf::require(tree.contains("models") && tree.at("models").contains(name),
              "oracle: unknown model '" + name + "'");
  const tf::ModelSpec spec =
      tf::model_spec_from_config(name, tree.at("models").at(name), vocab);
  return tf::build_model(spec.arch, spec.seed);
}

int cmd_oracle(const GlobalArgs& args) {
  const json tree = load_config(args);
  tf::require(tree.contains("oracle"), "config: missing [oracle] section");
  const json& section = tree.at("oracle");
  const tf::VocabSpec vocab = tf::vocab_from_config(tree);
  auto model = oracle_model(tree, vocab);

  tf::ContextTemplate tmpl = tf::template_from_config(tree);
  const bool restricted = tree.at("template").value("restricted", false);
  const tf::SearchSpace space =
      restricted ? tf::SearchSpace::excluding_controls(model->vocab())
                 : tf::SearchSpace::full_vocab(model->vocab());

  tf::require(section.contains("target"),
              "config: [oracle] needs target = [..]");
  tf::TargetSpec target{"oracle", section.at("target").get<tf::TokenSeq>()};
  const std::int64_t cap = section.value("cap", std::int64_t{1'000'000});

  const tf::ExhaustiveResult best =
      tf::exhaustive_best(*model, tmpl, target, space, cap);

  // finite-difference check on random suffixes of this instance
  const int instances = section.value("grad_check_instances", 3);
  tf::Rng rng =
      tf::make_rng(section.value("grad_check_seed", std::uint64_t{0}));
  std::uniform_int_distribution<int> pick(0, space.size() - 1);
  double max_err = 0.0;
  for (int i = 0; i < instances; ++i) {
    tf::TokenSeq suffix(tmpl.suffix_len);
    for (tf::Token& t : suffix) t = space.allowed[pick(rng)];
    tf::AssembledContext ctx = tf::assemble(tmpl, suffix, &space);
    tf::TokenSeq full = ctx.full;
    full.insert(full.end(), target.tokens.begin(), target.tokens.end());
    const tf::Matrix analytic =
        tf::backward_embed(*model, full, ctx.suffix_begin, ctx.suffix_end,
                           target.tokens, ctx.target_start);
    const tf::Matrix numeric =
        tf::finite_diff_grad(*model, full, ctx.suffix_begin, ctx.suffix_end,
                             target.tokens, ctx.target_start);
    max_err = std::max(max_err, tf::max_relative_error(analytic, numeric));
  }

  json report{{"suffix", best.suffix},
              {"loss", best.loss},
              {"evaluations", best.evaluations},
              {"grad_max_rel_err", max_err}};
  std::cout << report.dump(2) << "\n";
  return 0;
}

int cmd_sweep(const GlobalArgs& args) {
  const json tree = load_config(args);
  const tf::VocabSpec vocab = tf::vocab_from_config(tree);
  tf::ExperimentPlan plan =
      tf::plan_from_config(tree, load_plan_targets(tree, vocab));
  if (args.seed_override >= 0) {
    plan.base_seed = static_cast<std::uint64_t>(args.seed_override);
  }
  plan.validate();
  const tf::SweepSettings settings = tf::sweep_settings_from_config(tree);

  const tf::SweepResult result = tf::sweep(
      plan, settings.method, settings.grid, settings.trials, settings.seed);
  if (args.out.empty()) {
    throw std::invalid_argument("sweep: --out prefix is required");
  }
  ensure_out_dir(args.out);

  json best_tree;
  best_tree["attacks"][settings.method] =
      tf::attack_config_to_json(result.best);
  std::ofstream best_out(args.out + ".best.conf");
  best_out << tf::write_config_text(best_tree);

  std::ofstream log_out(args.out + ".trials.jsonl");
  for (const tf::SweepTrial& trial : result.trials) {
    json j{{"config", tf::attack_config_to_json(trial.config)},
           {"mean_train_loss", trial.mean_train_loss}};
    json overrides = json::object();
    for (const auto& [name, value] : trial.overrides) overrides[name] = value;
    j["overrides"] = std::move(overrides);
    log_out << j.dump() << "\n";
  }

  std::cout << "best config (mean train loss "
            << result.trials[result.best_index].mean_train_loss << "):\n"
            << tf::write_config_text(best_tree);
  std::cout << "wrote " << args.out << ".best.conf and " << args.out
            << ".trials.jsonl\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"token-forcing attack toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  GlobalArgs args;
  app.add_option("--config", args.config, "configuration file");
  app.add_option("--out", args.out, "output file or prefix");
  app.add_option("--parallel", args.parallel, "worker threads")
      ->check(CLI::PositiveNumber);
  app.add_flag("--dry-run", args.dry_run, "plan without executing");
  app.add_option("--seed-override", args.seed_override,
                 "override the config base seed");

  auto* targets = app.add_subcommand("targets", "sample a targets file");
  auto* attack = app.add_subcommand("attack", "run the attack plan");
  auto* leaderboard =
      app.add_subcommand("leaderboard", "aggregate results files");
  std::vector<std::string> results_files;
  leaderboard->add_option("results", results_files, "results .jsonl files");
  auto* oracle =
      app.add_subcommand("oracle", "exhaustive optimum and gradient check");
  auto* sweep = app.add_subcommand("sweep", "grid sweep on train targets");

  CLI11_PARSE(app, argc, argv);

  try {
    if (targets->parsed()) return cmd_targets(args);
    if (attack->parsed()) return cmd_attack(args);
    if (leaderboard->parsed()) return cmd_leaderboard(args, results_files);
    if (oracle->parsed()) return cmd_oracle(args);
    if (sweep->parsed()) return cmd_sweep(args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
