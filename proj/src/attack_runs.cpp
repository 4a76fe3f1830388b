#include "attack_internal.hpp"

#include <cmath>

namespace tokenforce {

namespace {

using detail::AttackRun;
using detail::step_rng;

TokenSeq context_with_suffix(const AttackRun& run,
                             std::span<const Token> suffix) {
  TokenSeq full = run.ctx.full;
  std::copy(suffix.begin(), suffix.end(), full.begin() + run.ctx.suffix_begin);
  return full;
}

TokenSeq full_with_target(const AttackRun& run, std::span<const Token> suffix) {
  TokenSeq full = context_with_suffix(run, suffix);
  full.insert(full.end(), run.p.target.tokens.begin(),
              run.p.target.tokens.end());
  return full;
}

/// Evaluates candidates and returns the argmin index (ties to the first).
int eval_argmin(const AttackRun& run, const std::vector<TokenSeq>& candidates,
                std::vector<double>& losses) {
  losses.resize(candidates.size());
  int best = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    losses[i] = run.evaluate(candidates[i]);
    if (losses[i] < losses[best]) best = static_cast<int>(i);
  }
  return best;
}

}  // namespace

/// Euclidean projection of a row onto the probability simplex.
Eigen::RowVectorXd project_to_simplex(Eigen::RowVectorXd row) {
  const int n = static_cast<int>(row.size());
  std::vector<double> u(row.data(), row.data() + n);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0;
  double theta = 0.0;
  for (int j = 0; j < n; ++j) {
    cumsum += u[j];
    const double candidate = (cumsum - 1.0) / (j + 1);
    if (u[j] - candidate > 0.0) theta = candidate;
  }
  for (int i = 0; i < n; ++i) row[i] = std::max(row[i] - theta, 0.0);
  return row;
}

Eigen::RowVectorXd sparsify_distribution(Eigen::RowVectorXd row, int cap) {
  const int n = static_cast<int>(row.size());
  if (cap >= n) return row;
  std::vector<int> kept = top_k_indices(row.transpose(), cap);
  Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(n);
  double kept_mass = 0.0;
  for (int i : kept) kept_mass += row[i];
  for (int i : kept) out[i] = row[i] / kept_mass;
  return out;
}

namespace {

Token masked_argmax(const Eigen::RowVectorXd& row, const SearchSpace& space) {
  Token best = space.allowed.front();
  for (Token t : space.allowed) {
    if (row[t] > row[best]) best = t;
  }
  return best;
}

}  // namespace

AttackOutcome run_gcg(const AttackProblem& p, const GcgConfig& cfg,
                      FlopMeter& meter, std::uint64_t seed) {
  AttackConfig::gcg(cfg).validate();
  AttackRun run(p, meter, "gcg", seed);
  Rng rng = make_rng(seed);
  TokenSeq x = run.random_suffix(rng);
  if (!run.initial_eval(x)) return run.finish();

  const std::int64_t s = run.total_tokens;
  const Flops step_cost = meter.forward_cost(s) + meter.backward_cost(s) +
                          meter.forward_cost(s, cfg.width);
  for (std::int64_t step = 1; meter.try_charge(step_cost); ++step) {
    const TokenSeq full = full_with_target(run, x);
    const Matrix grad = backward_onehot(p.model, full, run.ctx.suffix_begin,
                                        run.ctx.suffix_end, p.target.tokens,
                                        run.ctx.target_start);
    const auto proposals =
        detail::negative_gradient_top_k(grad, p.space, cfg.grad_top_k);

    Rng srng = step_rng(seed, step, detail::kSaltCandidates);
    std::uniform_int_distribution<int> pick_pos(0, p.tmpl.suffix_len - 1);
    std::vector<TokenSeq> candidates;
    candidates.reserve(cfg.width);
    for (int i = 0; i < cfg.width; ++i) {
      const int pos = pick_pos(srng);
      std::uniform_int_distribution<int> pick_tok(
          0, static_cast<int>(proposals[pos].size()) - 1);
      TokenSeq cand = x;
      cand[pos] = proposals[pos][pick_tok(srng)];
      candidates.push_back(std::move(cand));
    }

    std::vector<double> losses;
    const int best = eval_argmin(run, candidates, losses);
    x = candidates[best];
    run.offer(x, losses[best]);
    run.trace_point();
    run.out.steps = step;
  }
  return run.finish();
}

AttackOutcome run_random(const AttackProblem& p, const RandomConfig& cfg,
                         FlopMeter& meter, std::uint64_t seed) {
  AttackConfig::random_search(cfg).validate();
  AttackRun run(p, meter, "random", seed);
  Rng rng = make_rng(seed);
  TokenSeq x = run.random_suffix(rng);
  if (!run.initial_eval(x)) return run.finish();

  // Gradient-free: only forward costs are ever charged.
  const Flops step_cost = meter.forward_cost(run.total_tokens, cfg.candidates);
  for (std::int64_t step = 1; meter.try_charge(step_cost); ++step) {
    for (int i = 0; i < cfg.candidates; ++i) {
      const TokenSeq cand = run.random_suffix(rng);
      run.offer(cand, run.evaluate(cand));
    }
    run.trace_point();
    run.out.steps = step;
  }
  return run.finish();
}

AttackOutcome run_oss53(const AttackProblem& p, const Oss53Config& cfg,
                        FlopMeter& meter, std::uint64_t seed) {
  AttackConfig::oss53(cfg).validate();
  AttackRun run(p, meter, "oss53", seed);
  Rng rng = make_rng(seed);
  TokenSeq x = run.random_suffix(rng);
  if (!run.initial_eval(x)) return run.finish();

  const std::int64_t s = run.total_tokens;
  const Flops step_cost = meter.forward_cost(s) + meter.backward_cost(s) +
                          meter.forward_cost(s, cfg.candidates);
  // Optional auto mode: estimate the step count the remaining budget buys.
  const int total_steps =
      cfg.total_steps > 0
          ? cfg.total_steps
          : std::max<int>(1, static_cast<int>((meter.limit() - meter.used()) /
                                              step_cost));

  const GradTap tap(cfg.gamma);
  Matrix momentum = Matrix::Zero(p.tmpl.suffix_len, p.model.embed_dim());
  for (std::int64_t step = 1; meter.try_charge(step_cost); ++step) {
    const TokenSeq full = full_with_target(run, x);
    const Matrix grad = backward_embed(p.model, full, run.ctx.suffix_begin,
                                       run.ctx.suffix_end, p.target.tokens,
                                       run.ctx.target_start, tap);
    momentum = cfg.momentum * momentum + (1.0 - cfg.momentum) * grad;

    const int n_rep = oss53_n_rep(static_cast<int>(step), total_steps,
                                  cfg.switch_fraction);
    const Matrix embeds = p.model.embed_tokens(x);
    Rng srng = step_rng(seed, step, detail::kSaltCandidates);
    const auto candidates = dpto_candidates(
        momentum, embeds, p.model, p.space, x, cfg.cosine_top_k,
        cfg.temperature, cfg.candidates, n_rep, srng, cfg.negate_direction);

    std::vector<double> losses;
    const int best = eval_argmin(run, candidates, losses);
    x = candidates[best];
    run.offer(x, losses[best]);
    run.trace_point();
    run.out.steps = step;
    run.out.diag.push_back({meter.progress(), cfg.candidates, 0, false, n_rep});
  }
  return run.finish();
}

AttackOutcome run_oss2(const AttackProblem& p, const Oss2Config& cfg,
                       FlopMeter& meter, std::uint64_t seed) {
  AttackConfig::oss2(cfg).validate();
  AttackRun run(p, meter, "oss2", seed);
  Rng rng = make_rng(seed);
  TokenSeq x = run.random_suffix(rng);
  if (!run.initial_eval(x)) return run.finish();
  TokenSeq x_star = run.out.best_suffix;

  const std::int64_t s = run.total_tokens;
  const Flops budget = meter.limit();
  const Flops cycle_len = static_cast<Flops>(
      std::llround(cfg.cycle_fraction * static_cast<double>(budget)));
  int phase = 1;
  Flops cycle_start = 0;

  for (std::int64_t step = 1;; ++step) {
    const double rho = meter.progress();
    const int width = static_cast<int>(cfg.width.at(rho));
    const int strength = std::min<int>(
        static_cast<int>(cfg.perturb_strength.at(rho)), p.tmpl.suffix_len);
    const int merges = std::min(cfg.merge_depth, width);

    bool perturbed = false;
    if (phase == 1 && rho >= cfg.warmup_fraction) {
      phase = 2;
      perturbed = true;
    } else if (phase == 2 && meter.used() - cycle_start >= cycle_len) {
      perturbed = true;
    }
    if (perturbed) {
      Rng prng = step_rng(seed, step, detail::kSaltPerturb);
      x = perturb(x_star, strength, p.space, prng);
      cycle_start = meter.used();
    }

    const Flops step_cost = meter.forward_cost(s) + meter.backward_cost(s) +
                            meter.forward_cost(s, width) +
                            (merges > 0 ? meter.forward_cost(s, merges) : 0);
    if (!meter.try_charge(step_cost)) break;

    const TokenSeq& base = phase == 1 ? x_star : x;
    const TokenSeq full = full_with_target(run, base);
    const Matrix grad = backward_onehot(p.model, full, run.ctx.suffix_begin,
                                        run.ctx.suffix_end, p.target.tokens,
                                        run.ctx.target_start);
    const auto proposals =
        detail::negative_gradient_top_k(grad, p.space, cfg.grad_top_k);

    Rng srng = step_rng(seed, step, detail::kSaltCandidates);
    std::uniform_int_distribution<int> pick_pos(0, p.tmpl.suffix_len - 1);
    std::vector<TokenSeq> candidates;
    std::vector<std::pair<int, Token>> swaps(width);
    candidates.reserve(width + merges);
    for (int i = 0; i < width; ++i) {
      const int pos = pick_pos(srng);
      std::uniform_int_distribution<int> pick_tok(
          0, static_cast<int>(proposals[pos].size()) - 1);
      const Token tok = proposals[pos][pick_tok(srng)];
      swaps[i] = {pos, tok};
      TokenSeq cand = base;
      cand[pos] = tok;
      candidates.push_back(std::move(cand));
    }

    std::vector<double> single_losses;
    single_losses.resize(width);
    for (int i = 0; i < width; ++i) {
      single_losses[i] = run.evaluate(candidates[i]);
    }

    // rank the single swaps by loss and overlay the best `merges` of them
    std::vector<int> order(width);
    for (int i = 0; i < width; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (single_losses[a] != single_losses[b]) {
        return single_losses[a] < single_losses[b];
      }
      return a < b;
    });
    std::vector<std::pair<int, Token>> ranked;
    ranked.reserve(merges);
    for (int i = 0; i < merges; ++i) ranked.push_back(swaps[order[i]]);
    std::vector<TokenSeq> merged = merge_overlay(base, ranked);

    int best = 0;
    std::vector<double> losses = single_losses;
    for (auto& m : merged) {
      losses.push_back(run.evaluate(m));
      candidates.push_back(std::move(m));
    }
    for (std::size_t i = 1; i < losses.size(); ++i) {
      if (losses[i] < losses[best]) best = static_cast<int>(i);
    }

    x = candidates[best];
    run.offer(x, losses[best]);
    x_star = run.out.best_suffix;
    run.trace_point();
    run.out.steps = step;
    run.out.diag.push_back({rho, width, strength, perturbed, 0});
  }
  return run.finish();
}

AttackOutcome run_adc_lsgm(const AttackProblem& p, const AdcLsgmConfig& cfg,
                           FlopMeter& meter, std::uint64_t seed) {
  AttackConfig::adc_lsgm(cfg).validate();
  AttackRun run(p, meter, "adc_lsgm", seed);
  Rng rng = make_rng(seed);
  TokenSeq fallback = run.random_suffix(rng);
  if (!run.initial_eval(fallback)) return run.finish();

  const int restarts = cfg.restarts;
  const int len = p.tmpl.suffix_len;
  const int vsize = p.model.vocab_size();
  const TokenSeq pre(run.ctx.full.begin(),
                     run.ctx.full.begin() + run.ctx.suffix_begin);
  const TokenSeq post(run.ctx.full.begin() + run.ctx.suffix_end,
                      run.ctx.full.end());

  // z rows start as a softmax of standard-normal draws
  SoftSuffix soft;
  soft.z.assign(restarts, Matrix(len, vsize));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Matrix& zk : soft.z) {
    for (int l = 0; l < len; ++l) {
      Eigen::RowVectorXd row(vsize);
      for (int v = 0; v < vsize; ++v) row[v] = normal(rng);
      row = (row.array() - row.maxCoeff()).exp();
      zk.row(l) = row / row.sum();
    }
  }

  std::vector<Matrix> velocity(restarts, Matrix::Zero(len, vsize));
  std::vector<double> wrong_ema;  // lazy init at the first step
  const GradTap tap(cfg.gamma);
  const std::int64_t s = run.total_tokens;
  const Flops step_cost =
      meter.forward_cost(s, restarts) + meter.backward_cost(s, restarts) +
      meter.forward_cost(s, restarts);  // soft pass + discrete evaluation

  for (std::int64_t step = 1; meter.try_charge(step_cost); ++step) {
    SoftForwardResult res = soft_forward(p.model, pre, soft, post,
                                         p.target.tokens, tap);

    for (int k = 0; k < restarts; ++k) {
      velocity[k] = cfg.momentum * velocity[k] + cfg.loss_coeff * res.grad_z[k];
      soft.z[k] -= cfg.learning_rate * velocity[k];
      for (int l = 0; l < len; ++l) {
        soft.z[k].row(l) = project_to_simplex(soft.z[k].row(l));
      }
    }

    const std::vector<int> wrong =
        mispredictions(res.target_logits, p.target.tokens);
    if (wrong_ema.empty()) {
      wrong_ema.assign(wrong.begin(), wrong.end());
    } else {
      for (int k = 0; k < restarts; ++k) {
        wrong_ema[k] += cfg.ema_rate * (wrong[k] - wrong_ema[k]);
      }
    }

    const SoftSuffix pre_sparsify = soft;  // argmax candidates come from here
    for (int k = 0; k < restarts; ++k) {
      const int cap = static_cast<int>(std::clamp<long long>(
          std::llround(std::exp2(wrong_ema[k])), 1, vsize));
      for (int l = 0; l < len; ++l) {
        soft.z[k].row(l) = sparsify_distribution(soft.z[k].row(l), cap);
      }
    }

    for (int k = 0; k < restarts; ++k) {
      TokenSeq cand(len);
      for (int l = 0; l < len; ++l) {
        cand[l] = masked_argmax(pre_sparsify.z[k].row(l), p.space);
      }
      run.offer(cand, run.evaluate(cand));
    }
    run.trace_point();
    run.out.steps = step;
  }
  return run.finish();
}

}  // namespace tokenforce
