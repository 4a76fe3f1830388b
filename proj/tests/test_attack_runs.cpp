#include "tokenforce/attacks.hpp"

#include "tokenforce/analytic.hpp"
#include "tokenforce/oracle.hpp"
#include "tokenforce/toylm.hpp"

#include "attack_internal.hpp"

#include <doctest.h>

using namespace tokenforce;

namespace {

struct Instance {
  std::shared_ptr<LanguageModel> model;
  ContextTemplate tmpl;
  TargetSpec target;
  SearchSpace space;

  AttackProblem problem() const { return {*model, tmpl, target, space}; }
};

Instance toy_instance() {
  Instance in;
  in.model = build_model(ToyArch{1, 2, VocabSpec(16, {}, 8), 64}, 5);
  in.tmpl = ContextTemplate{{{"user", {3, 1}}}, 1, 4};
  in.target = TargetSpec{"t", {7, 2, 9}};
  in.space = SearchSpace::full_vocab(in.model->vocab());
  return in;
}

std::vector<AttackConfig> small_configs() {
  GcgConfig gcg;
  gcg.grad_top_k = 4;
  gcg.width = 8;
  Oss53Config oss53;
  oss53.candidates = 8;
  oss53.cosine_top_k = 4;
  oss53.total_steps = 10;
  Oss2Config oss2;
  oss2.grad_top_k = 4;
  oss2.merge_depth = 3;
  oss2.width = Schedule({{0.0, 8}, {0.5, 6}});
  oss2.perturb_strength = Schedule({{0.0, 2}, {0.6, 1}});
  AdcLsgmConfig adc;
  adc.restarts = 2;
  adc.learning_rate = 2.0;
  RandomConfig random;
  random.candidates = 4;
  return {AttackConfig::gcg(gcg), AttackConfig::oss53(oss53),
          AttackConfig::oss2(oss2), AttackConfig::adc_lsgm(adc),
          AttackConfig::random_search(random)};
}

bool non_increasing(const std::vector<TracePoint>& trace) {
  for (std::size_t i = 1; i < trace.size(); ++i) {
    if (trace[i].best_loss > trace[i - 1].best_loss + 1e-15) return false;
  }
  return true;
}

bool same_outcome(const AttackOutcome& a, const AttackOutcome& b) {
  if (a.method != b.method || a.seed != b.seed) return false;
  if (a.best_suffix != b.best_suffix || a.best_loss != b.best_loss) return false;
  if (a.flops_used != b.flops_used || a.steps != b.steps) return false;
  if (a.trace.size() != b.trace.size()) return false;
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    if (a.trace[i].flops != b.trace[i].flops) return false;
    if (a.trace[i].best_loss != b.trace[i].best_loss) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("every method: budget safety, monotone traces, determinism") {
  Instance in = toy_instance();
  for (const AttackConfig& cfg : small_configs()) {
    CAPTURE(cfg.method);
    const Flops budget = 40'000'000;
    FlopMeter m1(in.model->nonembed_params(), budget);
    AttackOutcome a = run_attack(in.problem(), cfg, m1, 42);
    FlopMeter m2(in.model->nonembed_params(), budget);
    AttackOutcome b = run_attack(in.problem(), cfg, m2, 42);

    CHECK(a.flops_used <= budget);
    CHECK(a.flops_used == m1.used());
    CHECK(a.steps >= 1);
    CHECK(non_increasing(a.trace));
    CHECK(same_outcome(a, b));

    // best_loss is faithful: recompute it from the suffix
    const double recomputed =
        token_forcing_loss(*in.model, in.tmpl, a.best_suffix, in.target).mean;
    CHECK(a.best_loss == doctest::Approx(recomputed).epsilon(1e-9));

    // a different seed gives a different initial suffix (and usually run)
    FlopMeter m3(in.model->nonembed_params(), budget);
    AttackOutcome c = run_attack(in.problem(), cfg, m3, 43);
    CHECK(c.seed != a.seed);
  }
}

TEST_CASE("budget exhausted before the first step returns the initial suffix") {
  Instance in = toy_instance();
  for (const AttackConfig& cfg : small_configs()) {
    CAPTURE(cfg.method);
    FlopMeter meter(in.model->nonembed_params(), 1);  // below one forward
    AttackOutcome out = run_attack(in.problem(), cfg, meter, 7);
    CHECK(out.steps == 0);
    CHECK(out.flops_used == 0);
    CHECK(out.best_suffix.size() == 4);
    const double loss =
        token_forcing_loss(*in.model, in.tmpl, out.best_suffix, in.target).mean;
    CHECK(out.best_loss == doctest::Approx(loss).epsilon(1e-12));
    CHECK(out.trace.size() == 1);
  }
}

TEST_CASE("restricted search spaces are honored by every method") {
  Instance in = toy_instance();
  in.model = build_model(ToyArch{1, 2, VocabSpec(16, {0, 1, 2}, 8), 64}, 5);
  in.space = SearchSpace::excluding_controls(in.model->vocab());
  for (const AttackConfig& cfg : small_configs()) {
    CAPTURE(cfg.method);
    FlopMeter meter(in.model->nonembed_params(), 10'000'000);
    AttackOutcome out = run_attack(in.problem(), cfg, meter, 3);
    for (Token t : out.best_suffix) {
      CHECK(in.space.contains(t));
      CHECK(t >= 3);
    }
  }
}

TEST_CASE("random search: trace sample count equals the evaluation budget") {
  Instance in = toy_instance();
  RandomConfig cfg;
  cfg.candidates = 1;
  const Flops one_eval = cost_forward(
      in.model->nonembed_params(),
      static_cast<std::int64_t>(in.tmpl.context_len()) + in.target.length());
  FlopMeter meter(in.model->nonembed_params(), 12 * one_eval);
  AttackOutcome out = run_random(in.problem(), cfg, meter, 11);
  CHECK(out.trace.size() == 12);  // initial eval plus 11 steps
  CHECK(out.steps == 11);
  CHECK(out.flops_used == 12 * one_eval);

  // gradient-free: accepted charges are all single forwards
  for (Flops c : meter.charges()) {
    CHECK(c == one_eval);
  }
}

TEST_CASE("random search matches the exhaustive oracle on tiny spaces") {
  Instance in;
  in.model = make_pointer_lm(4, 6.0);
  in.tmpl = ContextTemplate{{}, 0, 2};
  in.target = TargetSpec{"t", {2, 3}};
  in.space = SearchSpace::full_vocab(in.model->vocab());

  ExhaustiveResult oracle =
      exhaustive_best(*in.model, in.tmpl, in.target, in.space);
  RandomConfig cfg;
  cfg.candidates = 8;
  FlopMeter meter(in.model->nonembed_params(), 200'000);
  AttackOutcome out = run_random(in.problem(), cfg, meter, 5);
  CHECK(out.best_loss == doctest::Approx(oracle.loss).epsilon(1e-9));
  CHECK(out.best_loss >= oracle.loss - 1e-12);
}

TEST_CASE("gcg with grad_top_k=1 proposes one deterministic token per position") {
  // pointer double: the gradient at the last suffix position has a unique
  // minimizer, so every candidate that touches it proposes the same token
  Instance in;
  in.model = make_pointer_lm(8, 8.0);
  in.tmpl = ContextTemplate{{}, 0, 2};
  in.target = TargetSpec{"t", {5, 6}};
  in.space = SearchSpace::full_vocab(in.model->vocab());

  TokenSeq base = {1, 1};
  AssembledContext ctx = assemble(in.tmpl, base);
  TokenSeq full = ctx.full;
  full.insert(full.end(), in.target.tokens.begin(), in.target.tokens.end());
  Matrix grad = backward_onehot(*in.model, full, ctx.suffix_begin,
                                ctx.suffix_end, in.target.tokens,
                                ctx.target_start);
  const auto proposals = detail::negative_gradient_top_k(grad, in.space, 1);
  REQUIRE(proposals.size() == 2);
  CHECK(proposals[0].size() == 1);
  CHECK(proposals[1].size() == 1);
  // moving the last token to 4 (= 5 - 1) maximally reduces the loss
  CHECK(proposals[1][0] == 4);
}

TEST_CASE("gcg reaches the oracle optimum on the pointer instance") {
  Instance in;
  in.model = make_pointer_lm(8, 8.0);
  in.tmpl = ContextTemplate{{}, 0, 2};
  in.target = TargetSpec{"t", {5, 6, 7}};
  in.space = SearchSpace::full_vocab(in.model->vocab());
  ExhaustiveResult oracle =
      exhaustive_best(*in.model, in.tmpl, in.target, in.space);

  GcgConfig cfg;
  cfg.grad_top_k = 4;
  cfg.width = 8;
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    FlopMeter meter(in.model->nonembed_params(), 2'000'000);
    AttackOutcome out = run_gcg(in.problem(), cfg, meter, seed);
    CHECK(out.best_loss >= oracle.loss - 1e-12);
    if (out.best_loss <= oracle.loss + 1e-6) ++hits;
  }
  CHECK(hits >= 18);
}

TEST_CASE("oss53 with zero momentum reproduces the raw-gradient candidate stream") {
  Instance in = toy_instance();
  Oss53Config cfg;
  cfg.candidates = 6;
  cfg.cosine_top_k = 5;
  cfg.momentum = 0.0;
  cfg.total_steps = 4;

  const std::uint64_t seed = 99;
  const std::int64_t s =
      static_cast<std::int64_t>(in.tmpl.context_len()) + in.target.length();
  const Flops init_cost = cost_forward(in.model->nonembed_params(), s);
  const Flops step_cost = cost_forward(in.model->nonembed_params(), s) +
                          cost_backward(in.model->nonembed_params(), s) +
                          cost_forward(in.model->nonembed_params(), s, 6);
  FlopMeter meter(in.model->nonembed_params(), init_cost + step_cost);
  AttackOutcome out = run_oss53(in.problem(), cfg, meter, seed);
  REQUIRE(out.steps == 1);

  // replay the single step with the raw gradient in place of the momentum
  Rng rng = make_rng(seed);
  std::uniform_int_distribution<int> pick(0, in.space.size() - 1);
  TokenSeq x(in.tmpl.suffix_len);
  for (Token& t : x) t = in.space.allowed[pick(rng)];
  const double init_loss =
      token_forcing_loss(*in.model, in.tmpl, x, in.target).mean;

  AssembledContext ctx = assemble(in.tmpl, x);
  TokenSeq full = ctx.full;
  full.insert(full.end(), in.target.tokens.begin(), in.target.tokens.end());
  Matrix grad = backward_embed(*in.model, full, ctx.suffix_begin,
                               ctx.suffix_end, in.target.tokens,
                               ctx.target_start);
  Rng srng = detail::step_rng(seed, 1, detail::kSaltCandidates);
  auto cands = dpto_candidates(grad, in.model->embed_tokens(x), *in.model,
                               in.space, x, cfg.cosine_top_k, cfg.temperature,
                               cfg.candidates, /*n_rep=*/2, srng);
  double best = init_loss;
  TokenSeq best_suffix = x;
  double step_best = std::numeric_limits<double>::infinity();
  TokenSeq step_suffix;
  for (const TokenSeq& c : cands) {
    const double loss = token_forcing_loss(*in.model, in.tmpl, c, in.target).mean;
    if (loss < step_best) {
      step_best = loss;
      step_suffix = c;
    }
  }
  if (step_best < best) {
    best = step_best;
    best_suffix = step_suffix;
  }
  CHECK(out.best_loss == best);
  CHECK(out.best_suffix == best_suffix);
}

TEST_CASE("oss53 auto step estimate derives the count from the budget") {
  Instance in = toy_instance();
  Oss53Config cfg;
  cfg.candidates = 6;
  cfg.cosine_top_k = 5;
  cfg.total_steps = 0;  // auto
  cfg.switch_fraction = 0.5;
  const std::int64_t s =
      static_cast<std::int64_t>(in.tmpl.context_len()) + in.target.length();
  const std::int64_t n = in.model->nonembed_params();
  const Flops step_cost =
      cost_forward(n, s) + cost_backward(n, s) + cost_forward(n, s, 6);
  // budget for the initial eval plus exactly 8 steps
  FlopMeter meter(n, cost_forward(n, s) + 8 * step_cost);
  AttackOutcome out = run_oss53(in.problem(), cfg, meter, 1);
  CHECK(out.steps == 8);
  // estimated total is 8, so with f = 0.5 only steps 1..3 stay coarse
  int coarse = 0;
  for (const StepDiag& d : out.diag) {
    if (d.n_rep == 2) ++coarse;
  }
  CHECK(coarse == 3);  // steps 1..3 < 0.5 * 8
}

TEST_CASE("oss2 schedule bands and perturbation cycles appear in the diagnostics") {
  Instance in = toy_instance();
  Oss2Config cfg;
  cfg.grad_top_k = 4;
  cfg.merge_depth = 2;
  cfg.warmup_fraction = 0.2;
  cfg.cycle_fraction = 0.15;
  cfg.width = Schedule({{0.0, 8}, {0.5, 4}});
  cfg.perturb_strength = Schedule({{0.0, 3}, {0.6, 1}});

  FlopMeter meter(in.model->nonembed_params(), 20'000'000);
  AttackOutcome out = run_oss2(in.problem(), cfg, meter, 21);
  REQUIRE(out.diag.size() >= 4);
  bool saw_perturb = false;
  for (const StepDiag& d : out.diag) {
    CHECK(d.width == (d.rho >= 0.5 ? 4 : 8));
    CHECK(d.perturb_strength == (d.rho >= 0.6 ? 1 : 3));
    if (d.perturbed) saw_perturb = true;
  }
  CHECK(saw_perturb);
  // the first perturbation is the phase-1 -> phase-2 transition at rho >= 0.2
  for (const StepDiag& d : out.diag) {
    if (d.perturbed) {
      CHECK(d.rho >= 0.2);
      break;
    }
    CHECK(d.rho < 0.2);
  }
}

TEST_CASE("adc misprediction EMA is lazily initialized at the first step") {
  // With lazy init, the first step's EMA equals the misprediction count no
  // matter the rate, so a two-step run is invariant to it; without lazy init
  // the sparsity caps at step one would differ between the rates.
  Instance in = toy_instance();
  AdcLsgmConfig a;
  a.restarts = 2;
  a.learning_rate = 2.0;
  a.ema_rate = 0.01;
  AdcLsgmConfig b = a;
  b.ema_rate = 1.0;

  const std::int64_t s =
      static_cast<std::int64_t>(in.tmpl.context_len()) + in.target.length();
  const std::int64_t n = in.model->nonembed_params();
  const Flops step = cost_forward(n, s, 2) + cost_backward(n, s, 2) +
                     cost_forward(n, s, 2);
  FlopMeter m1(n, cost_forward(n, s) + 2 * step);
  FlopMeter m2(n, cost_forward(n, s) + 2 * step);
  AttackOutcome out_a = run_adc_lsgm(in.problem(), a, m1, 13);
  AttackOutcome out_b = run_adc_lsgm(in.problem(), b, m2, 13);
  CHECK(out_a.steps == 2);
  CHECK(out_a.best_loss == out_b.best_loss);
  CHECK(out_a.best_suffix == out_b.best_suffix);
}

TEST_CASE("adc sum/mean aggregation match under learning-rate rescaling") {
  Instance in = toy_instance();
  AdcLsgmConfig sum_form;
  sum_form.restarts = 3;
  sum_form.learning_rate = 2.0;
  sum_form.loss_coeff = 1.0;
  AdcLsgmConfig mean_form = sum_form;
  mean_form.learning_rate = 6.0;
  mean_form.loss_coeff = 1.0 / 3.0;

  FlopMeter m1(in.model->nonembed_params(), 12'000'000);
  FlopMeter m2(in.model->nonembed_params(), 12'000'000);
  AttackOutcome a = run_adc_lsgm(in.problem(), sum_form, m1, 4);
  AttackOutcome b = run_adc_lsgm(in.problem(), mean_form, m2, 4);
  REQUIRE(a.steps >= 50);
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    const double denom = std::max(1e-12, std::abs(a.trace[i].best_loss));
    CHECK(std::abs(a.trace[i].best_loss - b.trace[i].best_loss) / denom <
          1e-6);
  }
}

TEST_CASE("adc gamma=1 runs identically to the default inert tap") {
  // gamma = 1 is the documented disabled state of the tap; together with the
  // model-level check that GradTap(1.0) matches the default backward pass,
  // this pins run-level inertness
  Instance in = toy_instance();
  AdcLsgmConfig with_tap;
  with_tap.restarts = 2;
  with_tap.learning_rate = 2.0;
  with_tap.gamma = 1.0;
  FlopMeter m1(in.model->nonembed_params(), 4'000'000);
  FlopMeter m2(in.model->nonembed_params(), 4'000'000);
  AttackOutcome a = run_adc_lsgm(in.problem(), with_tap, m1, 8);
  AttackOutcome b = run_adc_lsgm(in.problem(), with_tap, m2, 8);
  CHECK(same_outcome(a, b));

  // and a gamma != 1 run genuinely differs
  AdcLsgmConfig scaled = with_tap;
  scaled.gamma = 0.7;
  FlopMeter m3(in.model->nonembed_params(), 4'000'000);
  AttackOutcome c = run_adc_lsgm(in.problem(), scaled, m3, 8);
  CHECK(a.best_loss != c.best_loss);
}
