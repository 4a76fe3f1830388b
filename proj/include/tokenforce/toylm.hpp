#pragma once

#include "tokenforce/model.hpp"

namespace tokenforce {

/// Architecture of the in-repo transformer. Small by design: exhaustive
/// oracles over it run in seconds.
struct ToyArch {
  int layers = 2;
  int heads = 2;
  VocabSpec vocab{64, {}, 32};
  int max_seq = 256;
};

/// Deterministic pre-norm decoder-only transformer with manual backprop.
///
/// Per layer: x += Attn(LN1(x)); x += MLP(LN2(x)), with causal multi-head
/// attention, a GELU MLP at 4x width, a final layer norm, and an untied
/// unembedding. Learned positional embeddings are added to the input rows.
/// All weights are drawn from a seeded mt19937_64 (normal, 1/sqrt(fan_in));
/// two models built from the same (arch, seed) are identical scalar for
/// scalar within one build of this library.
class ToyLM final : public LanguageModel {
 public:
  ToyLM(const ToyArch& arch, std::uint64_t seed);

  const Matrix& embedding_matrix() const override { return wte_; }
  std::int64_t nonembed_params() const override { return n_nonembed_; }
  Matrix forward_embeds(const Matrix& embeds) const override;
  Matrix embed_gradient(const Matrix& embeds, std::span<const Token> target,
                        int target_start,
                        const GradTap& tap = {}) const override;
  std::pair<ScoreResult, Matrix> score_and_gradient(
      const Matrix& embeds, std::span<const Token> target, int target_start,
      const GradTap& tap = {}) const override;

  const ToyArch& arch() const { return arch_; }
  std::uint64_t init_seed() const { return seed_; }
  const Matrix& unembedding_matrix() const { return wu_; }

 private:
  struct Layer {
    Matrix wq, wk, wv, wo;        // D x D
    Vector ln1_g, ln1_b, ln2_g, ln2_b;
    Matrix w1;                    // D x 4D
    Matrix w2;                    // 4D x D
  };

  struct Workspace;  // per-call activation tape

  void run_forward(const Matrix& embeds, Workspace& ws) const;
  Matrix backward_input(const Workspace& ws, std::span<const Token> target,
                        int target_start, double gamma) const;

  ToyArch arch_;
  std::uint64_t seed_;
  Matrix wte_;   // V x D
  Matrix wpe_;   // max_seq x D
  std::vector<Layer> layers_;
  Vector lnf_g_, lnf_b_;
  Matrix wu_;    // D x V
  std::int64_t n_nonembed_ = 0;
};

/// Validates the architecture and builds the model.
std::shared_ptr<ToyLM> build_model(const ToyArch& arch, std::uint64_t seed);

}  // namespace tokenforce
