#pragma once

#include "tokenforce/objective.hpp"

namespace tokenforce {

struct ExhaustiveResult {
  TokenSeq suffix;
  double loss = 0.0;
  std::int64_t evaluations = 0;
};

/// Thrown when an enumeration would exceed the configured cap; carries the
/// required evaluation count.
class EnumerationCapError : public std::runtime_error {
 public:
  EnumerationCapError(std::int64_t required, std::int64_t cap);
  std::int64_t required;
  std::int64_t cap;
};

/// Global minimizer of the token-forcing loss over space^L, by plain
/// lexicographic enumeration. Ties resolve to the lexicographically smallest
/// suffix. Refuses when |space|^L exceeds the cap.
ExhaustiveResult exhaustive_best(const LanguageModel& model,
                                 const ContextTemplate& tmpl,
                                 const TargetSpec& target,
                                 const SearchSpace& space,
                                 std::int64_t cap = 1'000'000);

/// Central-difference gradient of the mean target cross-entropy with respect
/// to the suffix-slot embeddings, coordinate by coordinate.
Matrix finite_diff_grad(const LanguageModel& model, std::span<const Token> full,
                        int suffix_begin, int suffix_end,
                        std::span<const Token> target, int target_start,
                        double step = 1e-5);

/// Worst per-coordinate relative error between two gradients, with
/// |a - b| compared absolutely when both entries are below `tiny`.
double max_relative_error(const Matrix& a, const Matrix& b,
                          double tiny = 1e-8);

/// Deliberately naive recomputation of the mean target cross-entropy: one
/// fresh forward per target position and a hand-rolled log-sum-exp. Shares
/// no scoring code with token_forcing_loss.
double independent_loss(const LanguageModel& model, std::span<const Token> full,
                        int target_start, int target_len);

}  // namespace tokenforce
