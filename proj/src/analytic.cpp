#include "tokenforce/analytic.hpp"

#include <cmath>

namespace tokenforce {

namespace {

VocabSpec square_vocab(VocabSpec vocab) {
  // The doubles use identity embeddings, so D must equal |V|.
  vocab.embedding_dim = vocab.size;
  return vocab;
}

}  // namespace

AnalyticLM::AnalyticLM(AnalyticKind kind, const VocabSpec& vocab, double bonus,
                       std::int64_t nominal_nonembed)
    : LanguageModel(square_vocab(vocab)),
      kind_(kind),
      bonus_(bonus),
      nominal_(nominal_nonembed) {
  require(std::isfinite(bonus), "AnalyticLM: bonus must be finite");
  const int v = vocab_size();
  if (nominal_ <= 0) nominal_ = static_cast<std::int64_t>(v) * v;
  identity_ = Matrix::Identity(v, v);
  bonus_matrix_ = Matrix::Zero(v, v);
  switch (kind) {
    case AnalyticKind::Uniform:
      break;
    case AnalyticKind::Pointer:
      for (int u = 0; u < v; ++u) bonus_matrix_(u, (u + 1) % v) = bonus;
      break;
    case AnalyticKind::Copy:
      for (int u = 0; u < v; ++u) bonus_matrix_(u, u) = bonus;
      break;
  }
}

Matrix AnalyticLM::forward_embeds(const Matrix& embeds) const {
  require(embeds.rows() >= 1, "AnalyticLM: empty input");
  require(embeds.cols() == vocab_size(), "AnalyticLM: embedding width mismatch");
  return embeds * bonus_matrix_;
}

Matrix AnalyticLM::embed_gradient(const Matrix& embeds,
                                  std::span<const Token> target,
                                  int target_start, const GradTap&) const {
  // No normalization layers, so the tap has nothing to scale.
  const int n = static_cast<int>(embeds.rows());
  const int t_len = static_cast<int>(target.size());
  require(t_len >= 1, "embed_gradient: empty target");
  require(target_start >= 1 && target_start + t_len <= n,
          "embed_gradient: target slot out of range");
  check_tokens(target);

  Matrix logits = forward_embeds(embeds);
  Matrix dlogits = Matrix::Zero(n, vocab_size());
  for (int i = 0; i < t_len; ++i) {
    const int row = target_start + i - 1;
    Eigen::RowVectorXd l = logits.row(row);
    const double row_max = l.maxCoeff();
    Eigen::RowVectorXd probs = (l.array() - row_max).exp();
    probs /= probs.sum();
    probs[target[i]] -= 1.0;
    dlogits.row(row) = probs / static_cast<double>(t_len);
  }
  return dlogits * bonus_matrix_.transpose();
}

std::shared_ptr<AnalyticLM> make_uniform_lm(int vocab_size,
                                            TokenSeq control_ids) {
  return std::make_shared<AnalyticLM>(
      AnalyticKind::Uniform,
      VocabSpec(vocab_size, std::move(control_ids), vocab_size), 0.0);
}

std::shared_ptr<AnalyticLM> make_pointer_lm(int vocab_size, double bonus,
                                            TokenSeq control_ids) {
  return std::make_shared<AnalyticLM>(
      AnalyticKind::Pointer,
      VocabSpec(vocab_size, std::move(control_ids), vocab_size), bonus);
}

std::shared_ptr<AnalyticLM> make_copy_lm(int vocab_size, double bonus,
                                         TokenSeq control_ids) {
  return std::make_shared<AnalyticLM>(
      AnalyticKind::Copy,
      VocabSpec(vocab_size, std::move(control_ids), vocab_size), bonus);
}

}  // namespace tokenforce
