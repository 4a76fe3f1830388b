#include "tokenforce/model.hpp"

#include <cmath>

namespace tokenforce {

namespace {

void check_slots(int n, int suffix_begin, int suffix_end, int target_start,
                 int target_len) {
  require(target_len >= 1, "target slot is empty");
  require(suffix_begin >= 0 && suffix_begin < suffix_end && suffix_end <= n,
          "suffix slot out of range");
  require(target_start >= 1 && target_start + target_len <= n,
          "target slot out of range");
  require(suffix_end <= target_start, "suffix and target slots overlap");
}

double row_cross_entropy(const Eigen::RowVectorXd& logits, Token target) {
  const double row_max = logits.maxCoeff();
  const double lse = std::log((logits.array() - row_max).exp().sum()) + row_max;
  return lse - logits[target];
}

}  // namespace

void LanguageModel::check_tokens(std::span<const Token> tokens) const {
  for (Token t : tokens) {
    if (!vocab_.in_range(t)) {
      fail_input("token " + std::to_string(t) + " out of vocabulary range");
    }
  }
}

Matrix LanguageModel::embed_tokens(std::span<const Token> tokens) const {
  check_tokens(tokens);
  const Matrix& w = embedding_matrix();
  Matrix e(tokens.size(), embed_dim());
  for (std::size_t i = 0; i < tokens.size(); ++i) e.row(i) = w.row(tokens[i]);
  return e;
}

Matrix LanguageModel::forward_logits(std::span<const Token> tokens) const {
  require(!tokens.empty(), "forward_logits: empty input");
  return forward_embeds(embed_tokens(tokens));
}

ScoreResult LanguageModel::score_embeds(const Matrix& embeds,
                                        std::span<const Token> target,
                                        int target_start) const {
  const int t_len = static_cast<int>(target.size());
  require(t_len >= 1, "score: empty target");
  require(target_start >= 1, "score: target cannot start the sequence");
  require(target_start + t_len <= embeds.rows(), "score: target out of range");
  check_tokens(target);

  Matrix logits = forward_embeds(embeds);
  ScoreResult res;
  res.position_losses.resize(t_len);
  res.target_logits.resize(t_len, vocab_size());
  for (int i = 0; i < t_len; ++i) {
    res.target_logits.row(i) = logits.row(target_start + i - 1);
    res.position_losses[i] =
        row_cross_entropy(res.target_logits.row(i), target[i]);
  }
  return res;
}

std::pair<ScoreResult, Matrix> LanguageModel::score_and_gradient(
    const Matrix& embeds, std::span<const Token> target, int target_start,
    const GradTap& tap) const {
  return {score_embeds(embeds, target, target_start),
          embed_gradient(embeds, target, target_start, tap)};
}

ScoreResult LanguageModel::score_tokens(std::span<const Token> full,
                                        std::span<const Token> target,
                                        int target_start) const {
  require(target_start + target.size() <= full.size(),
          "score: target slot exceeds sequence");
  for (std::size_t i = 0; i < target.size(); ++i) {
    require(full[target_start + i] == target[i],
            "score: sequence does not contain the target at the target slot");
  }
  return score_embeds(embed_tokens(full), target, target_start);
}

TokenSeq greedy_decode(const LanguageModel& model,
                       std::span<const Token> prefix, int n) {
  require(n >= 1, "greedy_decode: n must be >= 1");
  require(!prefix.empty(), "greedy_decode: empty prefix");
  TokenSeq seq(prefix.begin(), prefix.end());
  TokenSeq out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    Matrix logits = model.forward_logits(seq);
    const Token next = argmax_lowest(logits.row(logits.rows() - 1).transpose());
    out.push_back(next);
    seq.push_back(next);
  }
  return out;
}

Matrix backward_embed(const LanguageModel& model, std::span<const Token> full,
                      int suffix_begin, int suffix_end,
                      std::span<const Token> target, int target_start,
                      const GradTap& tap) {
  check_slots(static_cast<int>(full.size()), suffix_begin, suffix_end,
              target_start, static_cast<int>(target.size()));
  Matrix grads = model.embed_gradient(model.embed_tokens(full), target,
                                      target_start, tap);
  return grads.middleRows(suffix_begin, suffix_end - suffix_begin);
}

Matrix backward_onehot(const LanguageModel& model, std::span<const Token> full,
                       int suffix_begin, int suffix_end,
                       std::span<const Token> target, int target_start,
                       const GradTap& tap) {
  Matrix grad_e = backward_embed(model, full, suffix_begin, suffix_end, target,
                                 target_start, tap);
  // Linearity of the embedding layer: d/d(onehot[v]) = <grad_e, W[v]>.
  return grad_e * model.embedding_matrix().transpose();
}

void SoftSuffix::validate(int vocab_size) const {
  require(!z.empty(), "SoftSuffix: no restarts");
  const int rows = length();
  require(rows >= 1, "SoftSuffix: empty suffix");
  for (const Matrix& zk : z) {
    require(zk.rows() == rows && zk.cols() == vocab_size,
            "SoftSuffix: inconsistent shape");
    for (int l = 0; l < rows; ++l) {
      double sum = 0.0;
      for (int v = 0; v < vocab_size; ++v) {
        const double p = zk(l, v);
        require(p >= -1e-12, "SoftSuffix: negative probability");
        sum += p;
      }
      require(std::abs(sum - 1.0) <= 1e-6,
              "SoftSuffix: row does not sum to 1");
    }
  }
}

SoftForwardResult soft_forward(const LanguageModel& model,
                               std::span<const Token> prefix,
                               const SoftSuffix& soft,
                               std::span<const Token> postfix,
                               std::span<const Token> target,
                               const GradTap& tap) {
  require(!target.empty(), "soft_forward: empty target");
  soft.validate(model.vocab_size());

  const int k_restarts = soft.restarts();
  const int len = soft.length();
  const int pre = static_cast<int>(prefix.size());
  const int post = static_cast<int>(postfix.size());
  const int t_len = static_cast<int>(target.size());
  const int target_start = pre + len + post;
  require(target_start >= 1, "soft_forward: context is empty");

  const Matrix& w = model.embedding_matrix();
  Matrix pre_embeds = pre > 0 ? model.embed_tokens(prefix) : Matrix(0, model.embed_dim());
  Matrix post_embeds =
      post > 0 ? model.embed_tokens(postfix) : Matrix(0, model.embed_dim());
  Matrix target_embeds = model.embed_tokens(target);

  SoftForwardResult res;
  res.losses.resize(k_restarts, t_len);
  res.target_logits.resize(k_restarts);
  res.grad_z.resize(k_restarts);

  Matrix embeds(target_start + t_len, model.embed_dim());
  if (pre > 0) embeds.topRows(pre) = pre_embeds;
  if (post > 0) embeds.middleRows(pre + len, post) = post_embeds;
  embeds.bottomRows(t_len) = target_embeds;

  for (int k = 0; k < k_restarts; ++k) {
    embeds.middleRows(pre, len) = soft.z[k] * w;  // mix embedding rows
    auto [score, grads] =
        model.score_and_gradient(embeds, target, target_start, tap);
    res.losses.row(k) = score.position_losses.transpose();
    res.target_logits[k] = std::move(score.target_logits);
    res.grad_z[k] = grads.middleRows(pre, len) * w.transpose();
  }
  return res;
}

}  // namespace tokenforce
