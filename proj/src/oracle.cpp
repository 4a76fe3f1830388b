#include "tokenforce/oracle.hpp"

#include <cmath>

namespace tokenforce {

EnumerationCapError::EnumerationCapError(std::int64_t required_,
                                         std::int64_t cap_)
    : std::runtime_error("exhaustive search needs " +
                         std::to_string(required_) +
                         " evaluations, above the cap of " +
                         std::to_string(cap_)),
      required(required_),
      cap(cap_) {}

ExhaustiveResult exhaustive_best(const LanguageModel& model,
                                 const ContextTemplate& tmpl,
                                 const TargetSpec& target,
                                 const SearchSpace& space, std::int64_t cap) {
  require(space.size() >= 1, "exhaustive_best: empty search space");
  require(tmpl.suffix_len >= 1, "exhaustive_best: suffix_len must be >= 1");

  const int len = tmpl.suffix_len;
  const std::int64_t base = space.size();
  std::int64_t total = 1;
  for (int i = 0; i < len; ++i) {
    if (total > cap / base) {
      const double required = std::pow(static_cast<double>(base), len);
      throw EnumerationCapError(
          static_cast<std::int64_t>(
              std::min(required, 9.0e18)),
          cap);
    }
    total *= base;
  }
  if (total > cap) throw EnumerationCapError(total, cap);

  // Lexicographic odometer over allowed ids in ascending order; strict
  // improvement keeps the lexicographically smallest minimizer.
  std::vector<int> digits(len, 0);
  TokenSeq suffix(len, space.allowed[0]);
  ExhaustiveResult best;
  best.loss = std::numeric_limits<double>::infinity();
  for (std::int64_t it = 0; it < total; ++it) {
    for (int i = 0; i < len; ++i) suffix[i] = space.allowed[digits[i]];
    const double loss =
        token_forcing_loss(model, tmpl, suffix, target, &space).mean;
    ++best.evaluations;
    if (loss < best.loss) {
      best.loss = loss;
      best.suffix = suffix;
    }
    // increment odometer, last position fastest
    for (int i = len - 1; i >= 0; --i) {
      if (++digits[i] < base) break;
      digits[i] = 0;
    }
  }
  return best;
}

Matrix finite_diff_grad(const LanguageModel& model, std::span<const Token> full,
                        int suffix_begin, int suffix_end,
                        std::span<const Token> target, int target_start,
                        double step) {
  require(step > 0.0, "finite_diff_grad: step must be > 0");
  require(suffix_begin >= 0 && suffix_begin < suffix_end &&
              suffix_end <= static_cast<int>(full.size()),
          "finite_diff_grad: suffix slot out of range");

  const Matrix base = model.embed_tokens(full);
  Matrix grad(suffix_end - suffix_begin, model.embed_dim());
  Matrix probe = base;
  for (int l = suffix_begin; l < suffix_end; ++l) {
    for (int c = 0; c < model.embed_dim(); ++c) {
      probe(l, c) = base(l, c) + step;
      const double up =
          model.score_embeds(probe, target, target_start).mean_loss();
      probe(l, c) = base(l, c) - step;
      const double down =
          model.score_embeds(probe, target, target_start).mean_loss();
      probe(l, c) = base(l, c);
      grad(l - suffix_begin, c) = (up - down) / (2.0 * step);
    }
  }
  return grad;
}

double max_relative_error(const Matrix& a, const Matrix& b, double tiny) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          "max_relative_error: shape mismatch");
  double worst = 0.0;
  for (int i = 0; i < a.rows(); ++i) {
    for (int j = 0; j < a.cols(); ++j) {
      const double diff = std::abs(a(i, j) - b(i, j));
      const double denom = std::max(std::abs(a(i, j)), std::abs(b(i, j)));
      worst = std::max(worst, denom < tiny ? diff : diff / denom);
    }
  }
  return worst;
}

double independent_loss(const LanguageModel& model,
                        std::span<const Token> full, int target_start,
                        int target_len) {
  require(target_len >= 1, "independent_loss: empty target");
  require(target_start >= 1, "independent_loss: target cannot start the sequence");
  require(target_start + target_len <= static_cast<int>(full.size()),
          "independent_loss: target slot out of range");

  // One fresh forward per position, scoring the last row only.
  double total = 0.0;
  for (int i = 0; i < target_len; ++i) {
    TokenSeq prefix(full.begin(), full.begin() + target_start + i);
    Matrix logits = model.forward_logits(prefix);
    Eigen::RowVectorXd row = logits.row(logits.rows() - 1);
    double max_logit = row[0];
    for (int v = 1; v < row.size(); ++v) max_logit = std::max(max_logit, row[v]);
    double sum_exp = 0.0;
    for (int v = 0; v < row.size(); ++v) sum_exp += std::exp(row[v] - max_logit);
    const Token t = full[target_start + i];
    total += max_logit + std::log(sum_exp) - row[t];
  }
  return total / target_len;
}

}  // namespace tokenforce
