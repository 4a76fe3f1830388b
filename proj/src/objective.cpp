#include "tokenforce/objective.hpp"

namespace tokenforce {

void ContextTemplate::validate(const VocabSpec& vocab) const {
  require(suffix_len >= 1, "template: suffix_len must be >= 1");
  require(suffix_slot >= 0 && suffix_slot <= static_cast<int>(segments.size()),
          "template: suffix_slot out of range");
  for (const Segment& seg : segments) {
    for (Token t : seg.tokens) {
      // Segments may contain control tokens; only range is checked.
      require(vocab.in_range(t), "template: segment token out of vocab range");
    }
  }
}

int ContextTemplate::context_len() const {
  int n = suffix_len;
  for (const Segment& seg : segments) n += static_cast<int>(seg.tokens.size());
  return n;
}

AssembledContext assemble(const ContextTemplate& tmpl,
                          std::span<const Token> suffix,
                          const SearchSpace* space) {
  require(static_cast<int>(suffix.size()) == tmpl.suffix_len,
          "assemble: suffix length does not match the template slot");
  if (space != nullptr) {
    for (Token t : suffix) {
      require(space->contains(t),
              "assemble: suffix token " + std::to_string(t) +
                  " outside the search space");
    }
  }

  AssembledContext out;
  out.full.reserve(tmpl.context_len());
  for (int i = 0; i < static_cast<int>(tmpl.segments.size()); ++i) {
    if (i == tmpl.suffix_slot) {
      out.suffix_begin = static_cast<int>(out.full.size());
      out.full.insert(out.full.end(), suffix.begin(), suffix.end());
      out.suffix_end = static_cast<int>(out.full.size());
    }
    const auto& seg = tmpl.segments[i].tokens;
    out.full.insert(out.full.end(), seg.begin(), seg.end());
  }
  if (tmpl.suffix_slot == static_cast<int>(tmpl.segments.size())) {
    out.suffix_begin = static_cast<int>(out.full.size());
    out.full.insert(out.full.end(), suffix.begin(), suffix.end());
    out.suffix_end = static_cast<int>(out.full.size());
  }
  out.target_start = static_cast<int>(out.full.size());
  return out;
}

LossBreakdown token_forcing_loss(const LanguageModel& model,
                                 const ContextTemplate& tmpl,
                                 std::span<const Token> suffix,
                                 const TargetSpec& target,
                                 const SearchSpace* space, const GradTap&) {
  require(target.length() >= 1, "token_forcing_loss: empty target");
  AssembledContext ctx = assemble(tmpl, suffix, space);
  TokenSeq full = ctx.full;
  full.insert(full.end(), target.tokens.begin(), target.tokens.end());
  ScoreResult score = model.score_tokens(full, target.tokens, ctx.target_start);
  LossBreakdown out;
  out.mean = score.mean_loss();
  out.per_position = std::move(score.position_losses);
  out.target_logits = std::move(score.target_logits);
  return out;
}

int mispredictions(const Matrix& target_logits,
                   std::span<const Token> target) {
  require(target_logits.rows() == static_cast<Eigen::Index>(target.size()),
          "mispredictions: shape mismatch");
  int wrong = 0;
  for (int i = 0; i < target_logits.rows(); ++i) {
    if (argmax_lowest(target_logits.row(i).transpose()) != target[i]) ++wrong;
  }
  return wrong;
}

std::vector<int> mispredictions(const std::vector<Matrix>& target_logits,
                                std::span<const Token> target) {
  std::vector<int> counts;
  counts.reserve(target_logits.size());
  for (const Matrix& block : target_logits) {
    counts.push_back(mispredictions(block, target));
  }
  return counts;
}

bool greedy_success(const LanguageModel& model, const ContextTemplate& tmpl,
                    std::span<const Token> suffix, const TargetSpec& target,
                    const SearchSpace* space) {
  require(target.length() >= 1, "greedy_success: empty target");
  AssembledContext ctx = assemble(tmpl, suffix, space);
  TokenSeq decoded = greedy_decode(model, ctx.full, target.length());
  return decoded == target.tokens;
}

std::vector<TargetSpec> sample_targets(const VocabSpec& vocab, int t_len,
                                       int count, std::uint64_t seed) {
  require(t_len >= 1, "sample_targets: target length must be >= 1");
  require(count >= 1, "sample_targets: count must be >= 1");
  TokenSeq allowed;
  for (int i = 0; i < vocab.size; ++i) {
    if (!vocab.is_control(i)) allowed.push_back(i);
  }
  require(!allowed.empty(), "sample_targets: no non-control tokens");

  Rng rng = make_rng(seed);
  std::uniform_int_distribution<int> pick(0,
                                          static_cast<int>(allowed.size()) - 1);
  std::vector<TargetSpec> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    TargetSpec t;
    t.id = "t" + std::to_string(i);
    t.tokens.reserve(t_len);
    for (int j = 0; j < t_len; ++j) t.tokens.push_back(allowed[pick(rng)]);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace tokenforce
