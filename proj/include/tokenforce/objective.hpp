#pragma once

#include "tokenforce/model.hpp"

#include <optional>
#include <string>

namespace tokenforce {

/// One fixed token run of the input context.
struct Segment {
  std::string role;  // e.g. "system", "user", "input"
  TokenSeq tokens;
};

/// The input context around the adversarial suffix: fixed segments, a single
/// suffix slot between them, and the suffix length L. Immutable during a run.
struct ContextTemplate {
  std::vector<Segment> segments;
  int suffix_slot = 0;   // insertion index into segments, in [0, |segments|]
  int suffix_len = 0;    // L >= 1

  void validate(const VocabSpec& vocab) const;
  int context_len() const;  // total fixed tokens + suffix_len
};

/// The forced target sequence t.
struct TargetSpec {
  std::string id;
  TokenSeq tokens;

  int length() const { return static_cast<int>(tokens.size()); }
};

/// assemble() output: the spliced context and the index ranges the gradient
/// ops slice.
struct AssembledContext {
  TokenSeq full;      // segments with the suffix spliced in
  int suffix_begin = 0;
  int suffix_end = 0;    // [suffix_begin, suffix_end)
  int target_start = 0;  // == full.size(); targets are appended here
};

/// Splices the suffix into the template's slot. When a search space is given,
/// every suffix token must belong to it.
AssembledContext assemble(const ContextTemplate& tmpl,
                          std::span<const Token> suffix,
                          const SearchSpace* space = nullptr);

struct LossBreakdown {
  double mean = 0.0;        // mean cross-entropy over target positions
  Vector per_position;      // length T
  Matrix target_logits;     // T x |V|, rows that scored each position
};

/// The token-forcing objective: teacher-forced mean cross-entropy of the
/// target after context + suffix.
LossBreakdown token_forcing_loss(const LanguageModel& model,
                                 const ContextTemplate& tmpl,
                                 std::span<const Token> suffix,
                                 const TargetSpec& target,
                                 const SearchSpace* space = nullptr,
                                 const GradTap& tap = {});

/// Count of target positions whose argmax (lowest id on ties) differs from
/// the target token.
int mispredictions(const Matrix& target_logits, std::span<const Token> target);

/// Per-restart counts for a batch of logit blocks.
std::vector<int> mispredictions(const std::vector<Matrix>& target_logits,
                                std::span<const Token> target);

/// True iff greedy decoding after context + suffix reproduces the target
/// exactly.
bool greedy_success(const LanguageModel& model, const ContextTemplate& tmpl,
                    std::span<const Token> suffix, const TargetSpec& target,
                    const SearchSpace* space = nullptr);

/// n i.i.d. targets of length t_len, uniform over the non-control ids.
std::vector<TargetSpec> sample_targets(const VocabSpec& vocab, int t_len,
                                       int count, std::uint64_t seed);

}  // namespace tokenforce
