#pragma once

#include "tokenforce/common.hpp"
#include "tokenforce/vocab.hpp"

#include <memory>

namespace tokenforce {

/// Backward-pass scaling applied to the gradient entering every
/// normalization layer. gamma = 1 leaves the backward pass untouched.
struct GradTap {
  double gamma = 1.0;

  GradTap() = default;
  explicit GradTap(double g) : gamma(g) {
    require(gamma > 0.0, "GradTap gamma must be > 0");
  }
};

/// Teacher-forced scores for one input: the per-target-position
/// cross-entropies and the logit rows that produced them.
struct ScoreResult {
  Vector position_losses;  // length T
  Matrix target_logits;    // T x |V|

  double mean_loss() const { return position_losses.mean(); }
};

/// Minimal surface the attack algorithms need from a language model.
/// Implementations are immutable after construction; every method is a pure
/// function of its arguments and safe to call concurrently.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  const VocabSpec& vocab() const { return vocab_; }
  int vocab_size() const { return vocab_.size; }
  int embed_dim() const { return vocab_.embedding_dim; }

  /// Token embedding matrix, |V| x D.
  virtual const Matrix& embedding_matrix() const = 0;

  /// Trainable scalar count excluding embedding and unembedding; the N of
  /// the Kaplan cost formulas.
  virtual std::int64_t nonembed_params() const = 0;

  /// Next-token logits for every prefix of the input, given explicit input
  /// embeddings (n x D). Row i conditions on rows 0..i.
  virtual Matrix forward_embeds(const Matrix& embeds) const = 0;

  /// Gradient of the mean target cross-entropy with respect to every input
  /// embedding row (n x D). Targets are tokens at input positions
  /// [target_start, target_start + target.size()).
  virtual Matrix embed_gradient(const Matrix& embeds,
                                std::span<const Token> target,
                                int target_start,
                                const GradTap& tap = {}) const = 0;

  /// Scores and input gradient from one logical forward/backward pass.
  virtual std::pair<ScoreResult, Matrix> score_and_gradient(
      const Matrix& embeds, std::span<const Token> target, int target_start,
      const GradTap& tap = {}) const;

  // --- helpers shared by all implementations ---

  /// Embedding lookup for a hard token sequence.
  Matrix embed_tokens(std::span<const Token> tokens) const;

  /// forward_embeds on embedded hard tokens; validates token range.
  Matrix forward_logits(std::span<const Token> tokens) const;

  /// Teacher-forced scoring of targets inside an embedded full sequence.
  ScoreResult score_embeds(const Matrix& embeds, std::span<const Token> target,
                           int target_start) const;

  /// Same over hard tokens; target tokens must equal
  /// full[target_start .. target_start+T).
  ScoreResult score_tokens(std::span<const Token> full,
                           std::span<const Token> target,
                           int target_start) const;

 protected:
  explicit LanguageModel(VocabSpec vocab) : vocab_(std::move(vocab)) {}
  void check_tokens(std::span<const Token> tokens) const;

 private:
  VocabSpec vocab_;
};

/// Autoregressive argmax decoding of n tokens after the prefix. Logit ties
/// resolve to the lowest token id.
TokenSeq greedy_decode(const LanguageModel& model,
                       std::span<const Token> prefix, int n);

/// L x D gradient of the mean target cross-entropy with respect to the
/// suffix-slot embeddings of a hard-token sequence.
Matrix backward_embed(const LanguageModel& model, std::span<const Token> full,
                      int suffix_begin, int suffix_end,
                      std::span<const Token> target, int target_start,
                      const GradTap& tap = {});

/// L x |V| gradient with respect to the one-hot encoding of the suffix:
/// the embedding-row projection of backward_embed.
Matrix backward_onehot(const LanguageModel& model, std::span<const Token> full,
                       int suffix_begin, int suffix_end,
                       std::span<const Token> target, int target_start,
                       const GradTap& tap = {});

/// K relaxed suffix distributions: z[k] is L x |V|, rows on the simplex.
struct SoftSuffix {
  std::vector<Matrix> z;

  int restarts() const { return static_cast<int>(z.size()); }
  int length() const { return z.empty() ? 0 : static_cast<int>(z[0].rows()); }

  /// Rows must be probability vectors: entries >= 0, sums within 1e-6 of 1.
  void validate(int vocab_size) const;
};

struct SoftForwardResult {
  Matrix losses;                      // K x T cross-entropies
  std::vector<Matrix> target_logits;  // K entries of T x |V|
  /// Gradient blocks of sum_k mean_i loss(k, i) with respect to z[k];
  /// each is L x |V|. Scale by the attack's loss coefficient as needed.
  std::vector<Matrix> grad_z;
};

/// Batched soft forward: restart k scores the sequence
/// prefix ++ (z[k] @ W_embed) ++ postfix ++ target with teacher forcing.
SoftForwardResult soft_forward(const LanguageModel& model,
                               std::span<const Token> prefix,
                               const SoftSuffix& soft,
                               std::span<const Token> postfix,
                               std::span<const Token> target,
                               const GradTap& tap = {});

}  // namespace tokenforce
