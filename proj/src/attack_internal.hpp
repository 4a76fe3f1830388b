#pragma once

#include "tokenforce/attacks.hpp"

#include <limits>

namespace tokenforce::detail {

// Salts for per-step RNG streams, so every draw is replayable from
// (run seed, step index, purpose).
inline constexpr std::uint64_t kSaltCandidates = 1;
inline constexpr std::uint64_t kSaltPerturb = 2;

inline Rng step_rng(std::uint64_t seed, std::int64_t step, std::uint64_t salt) {
  return make_rng(mix_seed(seed, static_cast<std::uint64_t>(step), salt));
}

/// Bookkeeping shared by every method: best-so-far tracking, the trace, and
/// the uniform run contract around the budget meter.
struct AttackRun {
  const AttackProblem& p;
  FlopMeter& meter;
  AttackOutcome out;
  AssembledContext ctx;     // slot positions; tokens hold the initial suffix
  std::int64_t total_tokens;  // context + target, the Kaplan token count

  AttackRun(const AttackProblem& p_, FlopMeter& meter_, std::string method,
            std::uint64_t seed)
      : p(p_), meter(meter_) {
    p.tmpl.validate(p.model.vocab());
    require(p.target.length() >= 1, "attack: empty target");
    require(p.space.size() >= 1, "attack: empty search space");
    out.method = std::move(method);
    out.seed = seed;
    out.best_loss = std::numeric_limits<double>::infinity();
    TokenSeq zeros(p.tmpl.suffix_len, p.space.allowed.front());
    ctx = assemble(p.tmpl, zeros, &p.space);
    total_tokens = static_cast<std::int64_t>(ctx.full.size()) + p.target.length();
  }

  TokenSeq random_suffix(Rng& rng) const {
    std::uniform_int_distribution<int> pick(0, p.space.size() - 1);
    TokenSeq s(p.tmpl.suffix_len);
    for (Token& t : s) t = p.space.allowed[pick(rng)];
    return s;
  }

  double evaluate(std::span<const Token> suffix) const {
    return token_forcing_loss(p.model, p.tmpl, suffix, p.target, &p.space).mean;
  }

  void offer(std::span<const Token> suffix, double loss) {
    if (loss < out.best_loss) {
      out.best_loss = loss;
      out.best_suffix.assign(suffix.begin(), suffix.end());
    }
  }

  void trace_point() { out.trace.push_back({meter.used(), out.best_loss}); }

  /// Charges and scores the initial suffix. When even one forward does not
  /// fit the budget, the loss is still computed so the outcome reports the
  /// fallback suffix faithfully; nothing is charged for it.
  bool initial_eval(std::span<const Token> suffix) {
    const bool charged = meter.try_charge(meter.forward_cost(total_tokens));
    offer(suffix, evaluate(suffix));
    trace_point();
    return charged;
  }

  AttackOutcome finish() {
    out.flops_used = meter.used();
    return std::move(out);
  }
};

/// Per-position top-k of the negative one-hot gradient, restricted to the
/// search space. Returns one candidate token list per suffix position.
std::vector<TokenSeq> negative_gradient_top_k(const Matrix& grad_onehot,
                                              const SearchSpace& space, int k);

}  // namespace tokenforce::detail
