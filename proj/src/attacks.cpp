#include "tokenforce/attacks.hpp"

#include "attack_internal.hpp"

#include <algorithm>
#include <cmath>

namespace tokenforce {

Schedule::Schedule(std::vector<std::pair<double, double>> points)
    : points_(std::move(points)) {
  require(!points_.empty(), "schedule: no breakpoints");
  require(points_.front().first == 0.0, "schedule: first breakpoint must be 0");
  for (std::size_t i = 0; i + 1 < points_.size(); ++i) {
    require(points_[i].first < points_[i + 1].first,
            "schedule: breakpoints must be strictly increasing");
  }
  require(points_.back().first <= 1.0, "schedule: breakpoints must lie in [0,1]");
}

Schedule Schedule::constant(double value) {
  return Schedule({{0.0, value}});
}

double Schedule::at(double rho) const {
  double value = points_.front().second;
  for (const auto& [bp, v] : points_) {
    if (rho >= bp) value = v;  // left-closed bands
  }
  return value;
}

void AttackConfig::validate() const {
  if (const auto* c = std::get_if<GcgConfig>(&params)) {
    require(c->grad_top_k >= 1, "gcg: grad_top_k must be >= 1");
    require(c->width >= 1, "gcg: width must be >= 1");
  } else if (const auto* c = std::get_if<RandomConfig>(&params)) {
    require(c->candidates >= 1, "random: candidates must be >= 1");
  } else if (const auto* c = std::get_if<Oss53Config>(&params)) {
    require(c->candidates >= 1, "oss53: candidates must be >= 1");
    require(c->cosine_top_k >= 1, "oss53: cosine_top_k must be >= 1");
    require(c->temperature > 0.0, "oss53: temperature must be > 0");
    require(c->momentum >= 0.0 && c->momentum < 1.0,
            "oss53: momentum must lie in [0, 1)");
    require(c->switch_fraction > 0.0 && c->switch_fraction <= 1.0,
            "oss53: switch_fraction must lie in (0, 1]");
    require(c->gamma > 0.0, "oss53: gamma must be > 0");
  } else if (const auto* c = std::get_if<Oss2Config>(&params)) {
    require(c->grad_top_k >= 1, "oss2: grad_top_k must be >= 1");
    require(c->merge_depth >= 0, "oss2: merge_depth must be >= 0");
    require(c->warmup_fraction > 0.0 && c->warmup_fraction <= 1.0,
            "oss2: warmup_fraction must lie in (0, 1]");
    require(c->cycle_fraction > 0.0 && c->cycle_fraction <= 1.0,
            "oss2: cycle_fraction must lie in (0, 1]");
    for (const auto& [bp, v] : c->width.points()) {
      require(v >= 1.0, "oss2: width values must be >= 1");
    }
    for (const auto& [bp, v] : c->perturb_strength.points()) {
      require(v >= 0.0, "oss2: perturbation values must be >= 0");
    }
  } else if (const auto* c = std::get_if<AdcLsgmConfig>(&params)) {
    require(c->momentum >= 0.0 && c->momentum < 1.0,
            "adc_lsgm: momentum must lie in [0, 1)");
    require(c->ema_rate > 0.0 && c->ema_rate <= 1.0,
            "adc_lsgm: ema_rate must lie in (0, 1]");
    require(c->restarts >= 1, "adc_lsgm: restarts must be >= 1");
    require(c->learning_rate > 0.0, "adc_lsgm: learning_rate must be > 0");
    require(c->gamma > 0.0, "adc_lsgm: gamma must be > 0");
    require(c->loss_coeff > 0.0, "adc_lsgm: loss_coeff must be > 0");
  }
}

AttackConfig AttackConfig::gcg(GcgConfig cfg) { return {"gcg", cfg}; }
AttackConfig AttackConfig::random_search(RandomConfig cfg) {
  return {"random", cfg};
}
AttackConfig AttackConfig::oss53(Oss53Config cfg) { return {"oss53", cfg}; }
AttackConfig AttackConfig::oss2(Oss2Config cfg) { return {"oss2", cfg}; }
AttackConfig AttackConfig::adc_lsgm(AdcLsgmConfig cfg) {
  return {"adc_lsgm", cfg};
}

const std::vector<std::string>& method_ids() {
  static const std::vector<std::string> ids = {"gcg", "oss53", "oss2",
                                               "adc_lsgm", "random"};
  return ids;
}

bool is_gradient_guided(const std::string& method) {
  return method != "random";
}

AttackOutcome run_attack(const AttackProblem& p, const AttackConfig& cfg,
                         FlopMeter& meter, std::uint64_t seed) {
  cfg.validate();
  if (cfg.method == "gcg") {
    return run_gcg(p, std::get<GcgConfig>(cfg.params), meter, seed);
  }
  if (cfg.method == "random") {
    return run_random(p, std::get<RandomConfig>(cfg.params), meter, seed);
  }
  if (cfg.method == "oss53") {
    return run_oss53(p, std::get<Oss53Config>(cfg.params), meter, seed);
  }
  if (cfg.method == "oss2") {
    return run_oss2(p, std::get<Oss2Config>(cfg.params), meter, seed);
  }
  if (cfg.method == "adc_lsgm") {
    return run_adc_lsgm(p, std::get<AdcLsgmConfig>(cfg.params), meter, seed);
  }
  std::string known;
  for (const auto& id : method_ids()) known += " " + id;
  fail_input("unknown method '" + cfg.method + "'; registered methods:" + known);
}

int oss53_n_rep(int step_index, int total_steps, double switch_fraction) {
  require(step_index >= 1, "n_rep: step index is 1-based");
  return step_index < switch_fraction * total_steps ? 2 : 1;
}

std::vector<TokenSeq> merge_overlay(
    std::span<const Token> base,
    std::span<const std::pair<int, Token>> top_swaps) {
  std::vector<TokenSeq> merged;
  merged.reserve(top_swaps.size());
  TokenSeq current(base.begin(), base.end());
  for (const auto& [pos, tok] : top_swaps) {
    require(pos >= 0 && pos < static_cast<int>(current.size()),
            "merge_overlay: swap position out of range");
    current[pos] = tok;  // later swaps overwrite earlier ones
    merged.push_back(current);
  }
  return merged;
}

TokenSeq perturb(std::span<const Token> x, int strength,
                 const SearchSpace& space, Rng& rng) {
  const int len = static_cast<int>(x.size());
  require(strength >= 0 && strength <= len,
          "perturb: strength must lie in [0, L]");
  TokenSeq out(x.begin(), x.end());
  if (strength == 0) return out;

  // Partial Fisher-Yates picks `strength` distinct positions.
  std::vector<int> positions(len);
  for (int i = 0; i < len; ++i) positions[i] = i;
  std::uniform_int_distribution<int> tok(0, space.size() - 1);
  for (int i = 0; i < strength; ++i) {
    std::uniform_int_distribution<int> pick(i, len - 1);
    std::swap(positions[i], positions[pick(rng)]);
    out[positions[i]] = space.allowed[tok(rng)];
  }
  return out;
}

std::vector<TokenSeq> dpto_candidates(const Matrix& momentum,
                                      const Matrix& embeddings,
                                      const LanguageModel& model,
                                      const SearchSpace& space,
                                      std::span<const Token> base,
                                      int cosine_top_k, double temperature,
                                      int batch, int n_rep, Rng& rng,
                                      bool negate_direction) {
  const int len = static_cast<int>(momentum.rows());
  require(embeddings.rows() == len, "dpto: momentum/embedding shape mismatch");
  require(static_cast<int>(base.size()) == len, "dpto: base length mismatch");
  require(temperature > 0.0, "dpto: temperature must be > 0");
  require(batch >= 1, "dpto: batch must be >= 1");
  require(n_rep >= 1 && n_rep <= len, "dpto: n_rep must lie in [1, L]");

  const Matrix& w = model.embedding_matrix();
  const int k = std::min(cosine_top_k, space.size());

  struct PositionDist {
    bool uniform = false;        // zero-momentum fallback
    std::vector<Token> tokens;   // filtered candidate set
    std::vector<double> probs;   // softmax of projected step scores
  };
  std::vector<PositionDist> dists(len);
  for (int l = 0; l < len; ++l) {
    PositionDist& dist = dists[l];
    Vector dir = momentum.row(l).transpose();
    if (negate_direction) dir = -dir;
    const double dir_norm = dir.norm();
    if (dir_norm < 1e-300) {
      dist.uniform = true;
      continue;
    }
    const int n_allowed = space.size();
    Vector cosines(n_allowed);
    Vector scores(n_allowed);
    for (int a = 0; a < n_allowed; ++a) {
      const Vector disp =
          (embeddings.row(l) - w.row(space.allowed[a])).transpose();
      const double disp_norm = disp.norm();
      const double dot = dir.dot(disp);
      // a zero displacement (candidate equals the current embedding) has no
      // direction; rank it below every real candidate
      cosines[a] = disp_norm < 1e-300 ? -2.0 : dot / (dir_norm * disp_norm);
      scores[a] = dot / temperature;
    }
    std::vector<int> kept = top_k_indices(cosines, k);
    double max_score = -std::numeric_limits<double>::infinity();
    for (int a : kept) max_score = std::max(max_score, scores[a]);
    dist.tokens.reserve(kept.size());
    dist.probs.reserve(kept.size());
    for (int a : kept) {
      dist.tokens.push_back(space.allowed[a]);
      dist.probs.push_back(std::exp(scores[a] - max_score));
    }
  }

  std::uniform_int_distribution<int> uniform_tok(0, space.size() - 1);
  auto sample_position = [&](int l) -> Token {
    const PositionDist& dist = dists[l];
    if (dist.uniform) return space.allowed[uniform_tok(rng)];
    return dist.tokens[sample_index(dist.probs, rng)];
  };

  std::vector<TokenSeq> candidates;
  candidates.reserve(batch);
  std::vector<int> perm(len);
  for (int i = 0; i < len; ++i) perm[i] = i;
  for (int b = 0; b < batch; ++b) {
    TokenSeq cand(base.begin(), base.end());
    if (n_rep == 1) {
      // stratified assignment: floor(b * L / batch)
      const int l = static_cast<int>(
          (static_cast<std::int64_t>(b) * len) / batch);
      cand[l] = sample_position(l);
    } else {
      std::shuffle(perm.begin(), perm.end(), rng);
      for (int r = 0; r < n_rep; ++r) {
        cand[perm[r]] = sample_position(perm[r]);
      }
    }
    candidates.push_back(std::move(cand));
  }
  return candidates;
}

namespace detail {

std::vector<TokenSeq> negative_gradient_top_k(const Matrix& grad_onehot,
                                              const SearchSpace& space,
                                              int k) {
  const int len = static_cast<int>(grad_onehot.rows());
  k = std::min(k, space.size());
  std::vector<TokenSeq> out(len);
  std::vector<int> allowed_idx(space.allowed.begin(), space.allowed.end());
  for (int l = 0; l < len; ++l) {
    Vector neg = -grad_onehot.row(l).transpose();
    std::vector<int> kept = top_k_indices(neg, allowed_idx, k);
    out[l].assign(kept.begin(), kept.end());
  }
  return out;
}

}  // namespace detail

}  // namespace tokenforce
