#pragma once

#include "tokenforce/model.hpp"

namespace tokenforce {

enum class AnalyticKind { Uniform, Pointer, Copy };

/// Closed-form test doubles sharing the LanguageModel interface.
///
/// Each is linear in its input: the logit row at position i is
/// embeds.row(i) * B for a fixed |V| x |V| bonus matrix B, with the
/// embedding matrix set to the identity (D = |V|), so hard tokens reduce to
/// one-hot rows and gradients are exact.
///   Uniform: B = 0 (all logits equal)
///   Pointer: B[u, (u+1) mod V] = bonus (favors the successor token)
///   Copy:    B[u, u] = bonus (favors repeating the input token)
class AnalyticLM final : public LanguageModel {
 public:
  AnalyticLM(AnalyticKind kind, const VocabSpec& vocab, double bonus,
             std::int64_t nominal_nonembed = 0);

  const Matrix& embedding_matrix() const override { return identity_; }
  std::int64_t nonembed_params() const override { return nominal_; }
  Matrix forward_embeds(const Matrix& embeds) const override;
  Matrix embed_gradient(const Matrix& embeds, std::span<const Token> target,
                        int target_start,
                        const GradTap& tap = {}) const override;

  AnalyticKind kind() const { return kind_; }
  double bonus() const { return bonus_; }

 private:
  AnalyticKind kind_;
  double bonus_;
  std::int64_t nominal_;
  Matrix bonus_matrix_;  // V x V
  Matrix identity_;      // V x V
};

std::shared_ptr<AnalyticLM> make_uniform_lm(int vocab_size,
                                            TokenSeq control_ids = {});
std::shared_ptr<AnalyticLM> make_pointer_lm(int vocab_size, double bonus,
                                            TokenSeq control_ids = {});
std::shared_ptr<AnalyticLM> make_copy_lm(int vocab_size, double bonus,
                                         TokenSeq control_ids = {});

}  // namespace tokenforce
