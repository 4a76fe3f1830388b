#include "tokenforce/harness.hpp"

#include "tokenforce/jsonl.hpp"
#include "tokenforce/oracle.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace tokenforce {

void ExperimentPlan::validate() const {
  require(!models.empty(), "plan: no models");
  require(!methods.empty(), "plan: no methods");
  require(!held_out_targets.empty(), "plan: no held-out targets");
  require(budget >= 1, "plan: budget must be positive");
  require(seeds_per_run >= 1, "plan: seeds_per_run must be >= 1");

  std::set<std::string> model_ids;
  for (const ModelSpec& m : models) {
    require(!m.id.empty(), "plan: model id is empty");
    require(model_ids.insert(m.id).second, "plan: duplicate model id " + m.id);
    require(m.arch.vocab.size == models.front().arch.vocab.size,
            "plan: models must share one vocabulary size");
  }
  std::set<std::string> method_names;
  for (const AttackConfig& cfg : methods) {
    cfg.validate();
    require(method_names.insert(cfg.method).second,
            "plan: duplicate method " + cfg.method);
  }
  std::set<std::string> target_ids;
  for (const TargetSpec& t : train_targets) {
    require(target_ids.insert(t.id).second, "plan: duplicate target " + t.id);
  }
  for (const TargetSpec& t : held_out_targets) {
    require(target_ids.insert(t.id).second,
            "plan: train and held-out targets overlap on " + t.id);
  }
  tmpl.validate(models.front().arch.vocab);
}

SearchSpace ExperimentPlan::search_space(const VocabSpec& vocab) const {
  return restricted ? SearchSpace::excluding_controls(vocab)
                    : SearchSpace::full_vocab(vocab);
}

std::string RunKey::to_string() const {
  return method + "/" + model_id + "/" + target_id + "/s" +
         std::to_string(seed_index);
}

std::uint64_t derive_run_seed(const RunKey& key, std::uint64_t base_seed) {
  std::string bytes;
  bytes += key.method;
  bytes += '\0';
  bytes += key.model_id;
  bytes += '\0';
  bytes += key.target_id;
  bytes += '\0';
  bytes += std::to_string(key.seed_index);
  return mix_seed(base_seed, fnv1a64(bytes), 0x7265706561746572ull);
}

std::pair<std::vector<TargetSpec>, std::vector<TargetSpec>> split_targets(
    std::vector<TargetSpec> all, int train_count, std::uint64_t seed) {
  require(train_count >= 0, "split_targets: train_count must be >= 0");
  require(train_count < static_cast<int>(all.size()),
          "split_targets: need at least one held-out target");
  Rng rng = make_rng(seed);
  std::shuffle(all.begin(), all.end(), rng);
  std::vector<TargetSpec> train(all.begin(), all.begin() + train_count);
  std::vector<TargetSpec> held(all.begin() + train_count, all.end());
  return {std::move(train), std::move(held)};
}

namespace {

struct Job {
  const AttackConfig* method;
  const ModelSpec* model_spec;
  const TargetSpec* target;
  int seed_index;
  std::string split;
};

std::vector<Job> enumerate_jobs(const ExperimentPlan& plan,
                                std::span<const TargetSpec> targets,
                                std::string_view split,
                                std::span<const ModelSpec> models) {
  std::vector<Job> jobs;
  for (const AttackConfig& method : plan.methods) {
    for (const ModelSpec& model : models) {
      for (const TargetSpec& target : targets) {
        for (int s = 0; s < plan.seeds_per_run; ++s) {
          jobs.push_back({&method, &model, &target, s, std::string(split)});
        }
      }
    }
  }
  return jobs;
}

ResultRecord execute_job(const ExperimentPlan& plan, const Job& job,
                         const LanguageModel& model,
                         const SearchSpace& space) {
  ResultRecord record;
  record.key = {job.method->method, job.model_spec->id, job.target->id,
                job.seed_index};
  record.split = job.split;
  try {
    FlopMeter meter(model.nonembed_params(), plan.budget);
    AttackProblem problem{model, plan.tmpl, *job.target, space};
    const std::uint64_t seed = derive_run_seed(record.key, plan.base_seed);
    record.outcome = run_attack(problem, *job.method, meter, seed);
    record.outcome.model_id = job.model_spec->id;
    record.outcome.target_id = job.target->id;
  } catch (const std::exception& e) {
    record.error = e.what();
  }
  return record;
}

std::vector<ResultRecord> execute_jobs(const ExperimentPlan& plan,
                                       const std::vector<Job>& jobs,
                                       int parallelism,
                                       const RunCallback& on_result) {
  std::map<std::string, std::shared_ptr<ToyLM>> model_cache;
  for (const ModelSpec& spec : plan.models) {
    model_cache[spec.id] = build_model(spec.arch, spec.seed);
  }
  const SearchSpace space =
      plan.search_space(plan.models.front().arch.vocab);

  std::vector<ResultRecord> records(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex emit_mutex;
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) break;
      records[i] = execute_job(plan, jobs[i],
                               *model_cache.at(jobs[i].model_spec->id), space);
      if (on_result) {
        std::lock_guard<std::mutex> lock(emit_mutex);
        on_result(records[i]);
      }
    }
  };
  const int threads =
      std::max(1, std::min<int>(parallelism, static_cast<int>(jobs.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return records;
}

}  // namespace

std::vector<ResultRecord> run_plan_in_memory(const ExperimentPlan& plan,
                                             std::span<const TargetSpec> targets,
                                             std::string_view split,
                                             std::span<const ModelSpec> models) {
  const auto jobs = enumerate_jobs(plan, targets, split, models);
  return execute_jobs(plan, jobs, 1, nullptr);
}

PlanProgress run_plan(const ExperimentPlan& plan,
                      const std::string& results_path, int parallelism,
                      const RunCallback& on_result) {
  plan.validate();

  std::set<std::string> known_keys;
  if (std::filesystem::exists(results_path)) {
    for (const ResultRecord& r : read_results_file(results_path)) {
      known_keys.insert(r.key.to_string());
    }
  }

  std::vector<Job> jobs;
  for (auto& job : enumerate_jobs(plan, plan.train_targets, "train",
                                  plan.models)) {
    jobs.push_back(job);
  }
  for (auto& job : enumerate_jobs(plan, plan.held_out_targets, "held_out",
                                  plan.models)) {
    jobs.push_back(job);
  }

  PlanProgress progress;
  std::vector<Job> pending;
  for (const Job& job : jobs) {
    const RunKey key{job.method->method, job.model_spec->id, job.target->id,
                     job.seed_index};
    if (known_keys.count(key.to_string()) > 0) {
      ++progress.skipped;
    } else {
      pending.push_back(job);
    }
  }

  std::ofstream out(results_path, std::ios::app);
  require(out.good(), "run_plan: cannot open results file " + results_path);
  std::mutex write_mutex;
  auto persist = [&](const ResultRecord& record) {
    std::lock_guard<std::mutex> lock(write_mutex);
    append_result(out, record);
    out.flush();
    if (on_result) on_result(record);
  };

  const auto records = execute_jobs(plan, pending, parallelism, persist);
  for (const ResultRecord& r : records) {
    ++progress.executed;
    if (r.failed()) ++progress.failed;
  }
  return progress;
}

double verify_results(const ExperimentPlan& plan,
                      std::span<const ResultRecord> records) {
  std::map<std::string, std::shared_ptr<ToyLM>> model_cache;
  std::map<std::string, const TargetSpec*> target_by_id;
  for (const ModelSpec& spec : plan.models) {
    model_cache[spec.id] = build_model(spec.arch, spec.seed);
  }
  for (const TargetSpec& t : plan.train_targets) target_by_id[t.id] = &t;
  for (const TargetSpec& t : plan.held_out_targets) target_by_id[t.id] = &t;

  double worst = 0.0;
  for (const ResultRecord& record : records) {
    if (record.failed()) continue;
    const auto& model = *model_cache.at(record.key.model_id);
    const TargetSpec& target = *target_by_id.at(record.key.target_id);
    AssembledContext ctx = assemble(plan.tmpl, record.outcome.best_suffix);
    TokenSeq full = ctx.full;
    full.insert(full.end(), target.tokens.begin(), target.tokens.end());
    const double recomputed =
        independent_loss(model, full, ctx.target_start, target.length());
    worst = std::max(worst, std::abs(recomputed - record.outcome.best_loss));
  }
  return worst;
}

AsrReport measure_asr(std::span<const ResultRecord> results,
                      const std::string& method, const LanguageModel& model,
                      const std::string& model_id, const ContextTemplate& tmpl,
                      const SearchSpace* space,
                      std::span<const TargetSpec> targets) {
  require(!targets.empty(), "measure_asr: no targets");
  AsrReport report;
  int successes = 0;
  for (const TargetSpec& target : targets) {
    const ResultRecord* best = nullptr;
    for (const ResultRecord& r : results) {
      if (r.failed() || r.key.method != method ||
          r.key.model_id != model_id || r.key.target_id != target.id) {
        continue;
      }
      if (best == nullptr ||
          r.outcome.best_loss < best->outcome.best_loss ||
          (r.outcome.best_loss == best->outcome.best_loss &&
           r.key.seed_index < best->key.seed_index)) {
        best = &r;
      }
    }
    if (best == nullptr) {
      fail_input("measure_asr: no result for method " + method + " on model " +
                 model_id + " target " + target.id);
    }
    const bool ok =
        greedy_success(model, tmpl, best->outcome.best_suffix, target, space);
    report.per_target.emplace_back(target.id, ok);
    if (ok) ++successes;
  }
  report.asr = static_cast<double>(successes) /
               static_cast<double>(targets.size());
  return report;
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<LeaderboardEntry> build_leaderboard(
    std::span<const ResultRecord> results,
    std::span<const std::string> model_ids) {
  require(!model_ids.empty(), "leaderboard: no models");

  // held-out records only; collect the method and target universes
  std::set<std::string> methods;
  std::set<std::string> target_ids;
  for (const ResultRecord& r : results) {
    if (r.failed() || r.split != "held_out") continue;
    methods.insert(r.key.method);
    target_ids.insert(r.key.target_id);
  }
  require(!methods.empty(), "leaderboard: no held-out results");

  std::vector<LeaderboardEntry> entries;
  for (const std::string& method : methods) {
    LeaderboardEntry e;
    e.method = method;
    double pooled_sum = 0.0;
    std::int64_t pooled_n = 0;
    for (const std::string& model : model_ids) {
      std::set<std::string> seen;
      std::vector<double> losses;
      for (const ResultRecord& r : results) {
        if (r.failed() || r.split != "held_out" || r.key.method != method ||
            r.key.model_id != model) {
          continue;
        }
        seen.insert(r.key.target_id);
        losses.push_back(r.outcome.best_loss);
      }
      for (const std::string& t : target_ids) {
        if (seen.count(t) == 0) {
          fail_input("leaderboard: missing results for method " + method +
                     " on model " + model + " target " + t);
        }
      }
      double mean = 0.0;
      for (double l : losses) mean += l;
      mean /= static_cast<double>(losses.size());
      double var = 0.0;
      for (double l : losses) var += (l - mean) * (l - mean);
      var /= static_cast<double>(losses.size());
      e.model_mean[model] = mean;
      e.model_std[model] = std::sqrt(var);
      for (double l : losses) pooled_sum += l;
      pooled_n += static_cast<std::int64_t>(losses.size());
    }
    e.mean_loss = pooled_sum / static_cast<double>(pooled_n);
    entries.push_back(std::move(e));
  }

  // per-model 1-based ranks by ascending mean loss, average-rank ties
  for (const std::string& model : model_ids) {
    std::vector<std::pair<double, LeaderboardEntry*>> order;
    for (LeaderboardEntry& e : entries) {
      order.emplace_back(e.model_mean.at(model), &e);
    }
    std::sort(order.begin(), order.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    std::size_t i = 0;
    while (i < order.size()) {
      std::size_t j = i;
      while (j + 1 < order.size() && order[j + 1].first == order[i].first) ++j;
      const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) {
        order[k].second->model_rank[model] = avg_rank;
      }
      i = j + 1;
    }
  }
  for (LeaderboardEntry& e : entries) {
    std::vector<double> ranks;
    for (const auto& [model, rank] : e.model_rank) ranks.push_back(rank);
    e.median_rank = median(std::move(ranks));
  }

  std::sort(entries.begin(), entries.end(),
            [](const LeaderboardEntry& a, const LeaderboardEntry& b) {
              if (a.median_rank != b.median_rank) {
                return a.median_rank < b.median_rank;
              }
              if (a.mean_loss != b.mean_loss) return a.mean_loss < b.mean_loss;
              return a.method < b.method;
            });
  return entries;
}

std::string leaderboard_table(std::span<const LeaderboardEntry> entries) {
  std::ostringstream out;
  std::vector<std::string> models;
  if (!entries.empty()) {
    for (const auto& [model, mean] : entries.front().model_mean) {
      models.push_back(model);
    }
  }
  auto pad = [](std::string s, std::size_t w) {
    if (s.size() < w) s.append(w - s.size(), ' ');
    return s;
  };
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return std::string(buf);
  };

  std::size_t method_w = 8;
  for (const auto& e : entries) method_w = std::max(method_w, e.method.size());
  out << pad("method", method_w + 2) << pad("med_rank", 10)
      << pad("mean_loss", 12);
  for (const auto& m : models) out << pad(m, 18);
  if (!entries.empty() && entries.front().asr.has_value()) out << "asr";
  out << "\n";
  for (const auto& e : entries) {
    out << pad(e.method, method_w + 2) << pad(fmt(e.median_rank), 10)
        << pad(fmt(e.mean_loss), 12);
    for (const auto& m : models) {
      out << pad(fmt(e.model_mean.at(m)) + "+-" + fmt(e.model_std.at(m)), 18);
    }
    if (e.asr.has_value()) out << fmt(*e.asr);
    out << "\n";
  }
  return out.str();
}

void apply_param(AttackConfig& cfg, const std::string& name, double value) {
  const auto as_int = [&]() { return static_cast<int>(std::llround(value)); };
  if (auto* c = std::get_if<GcgConfig>(&cfg.params)) {
    if (name == "grad_top_k") { c->grad_top_k = as_int(); return; }
    if (name == "width") { c->width = as_int(); return; }
  } else if (auto* c = std::get_if<RandomConfig>(&cfg.params)) {
    if (name == "candidates") { c->candidates = as_int(); return; }
  } else if (auto* c = std::get_if<Oss53Config>(&cfg.params)) {
    if (name == "candidates") { c->candidates = as_int(); return; }
    if (name == "cosine_top_k") { c->cosine_top_k = as_int(); return; }
    if (name == "temperature") { c->temperature = value; return; }
    if (name == "momentum") { c->momentum = value; return; }
    if (name == "switch_fraction") { c->switch_fraction = value; return; }
    if (name == "total_steps") { c->total_steps = as_int(); return; }
    if (name == "gamma") { c->gamma = value; return; }
  } else if (auto* c = std::get_if<Oss2Config>(&cfg.params)) {
    if (name == "grad_top_k") { c->grad_top_k = as_int(); return; }
    if (name == "merge_depth") { c->merge_depth = as_int(); return; }
    if (name == "warmup_fraction") { c->warmup_fraction = value; return; }
    if (name == "cycle_fraction") { c->cycle_fraction = value; return; }
  } else if (auto* c = std::get_if<AdcLsgmConfig>(&cfg.params)) {
    if (name == "momentum") { c->momentum = value; return; }
    if (name == "ema_rate") { c->ema_rate = value; return; }
    if (name == "restarts") { c->restarts = as_int(); return; }
    if (name == "learning_rate") { c->learning_rate = value; return; }
    if (name == "gamma") { c->gamma = value; return; }
    if (name == "loss_coeff") { c->loss_coeff = value; return; }
  }
  fail_input("unknown parameter '" + name + "' for method " + cfg.method);
}

SweepResult sweep(const ExperimentPlan& plan, const std::string& method,
                  const std::vector<std::pair<std::string, std::vector<double>>>&
                      grid,
                  int trials, std::uint64_t seed) {
  require(trials >= 1, "sweep: trials must be >= 1");
  require(!grid.empty(), "sweep: empty grid");
  require(!plan.train_targets.empty(), "sweep: no train targets");
  for (const auto& [name, values] : grid) {
    require(!values.empty(), "sweep: no values for parameter " + name);
  }

  const AttackConfig* base = nullptr;
  for (const AttackConfig& cfg : plan.methods) {
    if (cfg.method == method) base = &cfg;
  }
  require(base != nullptr, "sweep: method " + method + " not in the plan");

  // cartesian product of the grid values
  std::vector<std::vector<ParamOverride>> product{{}};
  for (const auto& [name, values] : grid) {
    std::vector<std::vector<ParamOverride>> next;
    for (const auto& combo : product) {
      for (double v : values) {
        auto extended = combo;
        extended.emplace_back(name, v);
        next.push_back(std::move(extended));
      }
    }
    product = std::move(next);
  }
  Rng rng = make_rng(seed);
  std::shuffle(product.begin(), product.end(), rng);
  const int n_trials = std::min<int>(trials, static_cast<int>(product.size()));

  // the sweep sees only train targets and non-held-out models
  std::vector<ModelSpec> train_models;
  for (const ModelSpec& m : plan.models) {
    if (!m.held_out) train_models.push_back(m);
  }
  require(!train_models.empty(), "sweep: every model is held out");

  SweepResult result;
  for (int i = 0; i < n_trials; ++i) {
    SweepTrial trial;
    trial.overrides = product[i];
    trial.config = *base;
    for (const auto& [name, value] : trial.overrides) {
      apply_param(trial.config, name, value);
    }
    trial.config.validate();

    ExperimentPlan trial_plan = plan;
    trial_plan.methods = {trial.config};
    const auto records = run_plan_in_memory(trial_plan, plan.train_targets,
                                            "train", train_models);
    double sum = 0.0;
    std::int64_t n = 0;
    bool any_failed = false;
    for (const ResultRecord& r : records) {
      if (r.failed()) {
        any_failed = true;
        continue;
      }
      sum += r.outcome.best_loss;
      ++n;
    }
    trial.mean_train_loss = any_failed || n == 0
                                ? std::numeric_limits<double>::infinity()
                                : sum / static_cast<double>(n);
    result.trials.push_back(std::move(trial));
  }

  result.best_index = 0;
  for (int i = 1; i < static_cast<int>(result.trials.size()); ++i) {
    if (result.trials[i].mean_train_loss <
        result.trials[result.best_index].mean_train_loss) {
      result.best_index = i;
    }
  }
  result.best = result.trials[result.best_index].config;
  return result;
}

}  // namespace tokenforce
