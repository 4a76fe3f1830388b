#include "tokenforce/toylm.hpp"

#include <cmath>

namespace tokenforce {

namespace {

constexpr double kLnEps = 1e-6;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_deriv(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return cdf + x * pdf;
}

Matrix random_matrix(int rows, int cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
  }
  return m;
}

struct LnStats {
  Matrix normed;  // n x D, pre scale/shift
  Vector rstd;    // n
};

Matrix layernorm_forward(const Matrix& x, const Vector& g, const Vector& b,
                         LnStats& stats) {
  const int n = static_cast<int>(x.rows());
  const int d = static_cast<int>(x.cols());
  stats.normed.resize(n, d);
  stats.rstd.resize(n);
  Matrix y(n, d);
  for (int i = 0; i < n; ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    stats.rstd[i] = rstd;
    stats.normed.row(i) = (x.row(i).array() - mean) * rstd;
    y.row(i) = stats.normed.row(i).cwiseProduct(g.transpose()) + b.transpose();
  }
  return y;
}

Matrix layernorm_backward(const Matrix& dy, const Vector& g,
                          const LnStats& stats) {
  const int n = static_cast<int>(dy.rows());
  const int d = static_cast<int>(dy.cols());
  Matrix dx(n, d);
  for (int i = 0; i < n; ++i) {
    Eigen::RowVectorXd dnormed = dy.row(i).cwiseProduct(g.transpose());
    const double mean_dn = dnormed.mean();
    const double mean_dn_xhat = dnormed.cwiseProduct(stats.normed.row(i)).mean();
    dx.row(i) = stats.rstd[i] *
                (dnormed.array() - mean_dn -
                 stats.normed.row(i).array() * mean_dn_xhat);
  }
  return dx;
}

}  // namespace

struct ToyLM::Workspace {
  struct LayerTape {
    Matrix h_in;          // n x D, residual stream entering the layer
    LnStats ln1;
    Matrix q, k, v;       // n x D
    std::vector<Matrix> attn;  // per head, n x n row-softmax probabilities
    Matrix ctx;           // n x D, concatenated head outputs
    Matrix h_mid;         // n x D, after the attention residual
    LnStats ln2;
    Matrix f1;            // n x 4D, pre-activation
    Matrix act;           // n x 4D, post-GELU
  };
  std::vector<LayerTape> layers;
  Matrix h_out;  // n x D, stream entering the final norm
  LnStats lnf;
  Matrix lnf_y;  // n x D
  Matrix logits; // n x V
};

ToyLM::ToyLM(const ToyArch& arch, std::uint64_t seed)
    : LanguageModel(arch.vocab), arch_(arch), seed_(seed) {
  require(arch.layers >= 1, "ToyLM: layers must be >= 1");
  require(arch.heads >= 1, "ToyLM: heads must be >= 1");
  require(arch.vocab.size >= 4, "ToyLM: vocab size must be >= 4");
  require(arch.max_seq >= 2, "ToyLM: max_seq must be >= 2");
  const int d = arch.vocab.embedding_dim;
  require(d % arch.heads == 0, "ToyLM: embedding_dim must divide by heads");

  Rng rng = make_rng(seed);
  const double embed_std = 1.0 / std::sqrt(static_cast<double>(d));
  wte_ = random_matrix(arch.vocab.size, d, embed_std, rng);
  wpe_ = random_matrix(arch.max_seq, d, embed_std, rng);

  layers_.resize(arch.layers);
  for (auto& layer : layers_) {
    layer.wq = random_matrix(d, d, embed_std, rng);
    layer.wk = random_matrix(d, d, embed_std, rng);
    layer.wv = random_matrix(d, d, embed_std, rng);
    layer.wo = random_matrix(d, d, embed_std, rng);
    layer.ln1_g = Vector::Ones(d);
    layer.ln1_b = Vector::Zero(d);
    layer.ln2_g = Vector::Ones(d);
    layer.ln2_b = Vector::Zero(d);
    layer.w1 = random_matrix(d, 4 * d, embed_std, rng);
    layer.w2 = random_matrix(4 * d, d, 1.0 / std::sqrt(4.0 * d), rng);
  }
  lnf_g_ = Vector::Ones(d);
  lnf_b_ = Vector::Zero(d);
  wu_ = random_matrix(d, arch.vocab.size, embed_std, rng);

  const std::int64_t dd = d;
  n_nonembed_ = arch.layers * (12 * dd * dd + 4 * dd) + 2 * dd;
}

void ToyLM::run_forward(const Matrix& embeds, Workspace& ws) const {
  const int n = static_cast<int>(embeds.rows());
  const int d = embed_dim();
  const int heads = arch_.heads;
  const int hd = d / heads;
  require(n >= 1, "ToyLM: empty input");
  require(static_cast<int>(embeds.cols()) == d, "ToyLM: embedding width mismatch");
  require(n <= arch_.max_seq, "ToyLM: sequence longer than max_seq");

  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Matrix h = embeds + wpe_.topRows(n);

  ws.layers.resize(layers_.size());
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const Layer& w = layers_[li];
    auto& tape = ws.layers[li];
    tape.h_in = h;

    Matrix a = layernorm_forward(h, w.ln1_g, w.ln1_b, tape.ln1);
    tape.q = a * w.wq;
    tape.k = a * w.wk;
    tape.v = a * w.wv;
    tape.ctx.resize(n, d);
    tape.attn.assign(heads, Matrix());
    for (int hh = 0; hh < heads; ++hh) {
      auto qh = tape.q.middleCols(hh * hd, hd);
      auto kh = tape.k.middleCols(hh * hd, hd);
      auto vh = tape.v.middleCols(hh * hd, hd);
      Matrix scores = qh * kh.transpose() * scale;  // n x n
      Matrix& probs = tape.attn[hh];
      probs.setZero(n, n);
      for (int i = 0; i < n; ++i) {
        // causal row softmax over columns 0..i
        double row_max = scores(i, 0);
        for (int j = 1; j <= i; ++j) row_max = std::max(row_max, scores(i, j));
        double denom = 0.0;
        for (int j = 0; j <= i; ++j) {
          probs(i, j) = std::exp(scores(i, j) - row_max);
          denom += probs(i, j);
        }
        for (int j = 0; j <= i; ++j) probs(i, j) /= denom;
      }
      tape.ctx.middleCols(hh * hd, hd) = probs * vh;
    }
    h += tape.ctx * w.wo;
    tape.h_mid = h;

    Matrix b = layernorm_forward(h, w.ln2_g, w.ln2_b, tape.ln2);
    tape.f1 = b * w.w1;
    tape.act = tape.f1.unaryExpr([](double x) { return gelu(x); });
    h += tape.act * w.w2;
  }

  ws.h_out = h;
  ws.lnf_y = layernorm_forward(h, lnf_g_, lnf_b_, ws.lnf);
  ws.logits = ws.lnf_y * wu_;
}

Matrix ToyLM::forward_embeds(const Matrix& embeds) const {
  Workspace ws;
  run_forward(embeds, ws);
  return std::move(ws.logits);
}

Matrix ToyLM::embed_gradient(const Matrix& embeds,
                             std::span<const Token> target, int target_start,
                             const GradTap& tap) const {
  Workspace ws;
  run_forward(embeds, ws);
  return backward_input(ws, target, target_start, tap.gamma);
}

std::pair<ScoreResult, Matrix> ToyLM::score_and_gradient(
    const Matrix& embeds, std::span<const Token> target, int target_start,
    const GradTap& tap) const {
  Workspace ws;
  run_forward(embeds, ws);

  const int t_len = static_cast<int>(target.size());
  require(t_len >= 1, "score: empty target");
  require(target_start >= 1 && target_start + t_len <= embeds.rows(),
          "score: target slot out of range");
  check_tokens(target);
  ScoreResult score;
  score.position_losses.resize(t_len);
  score.target_logits.resize(t_len, vocab_size());
  for (int i = 0; i < t_len; ++i) {
    Eigen::RowVectorXd logits = ws.logits.row(target_start + i - 1);
    const double row_max = logits.maxCoeff();
    const double lse =
        std::log((logits.array() - row_max).exp().sum()) + row_max;
    score.target_logits.row(i) = logits;
    score.position_losses[i] = lse - logits[target[i]];
  }
  return {std::move(score), backward_input(ws, target, target_start, tap.gamma)};
}

Matrix ToyLM::backward_input(const Workspace& ws, std::span<const Token> target,
                             int target_start, double gamma) const {
  const int n = static_cast<int>(ws.logits.rows());
  const int t_len = static_cast<int>(target.size());
  require(t_len >= 1, "embed_gradient: empty target");
  require(target_start >= 1, "embed_gradient: target cannot start the sequence");
  require(target_start + t_len <= n, "embed_gradient: target slot out of range");
  check_tokens(target);

  const int d = embed_dim();
  const int heads = arch_.heads;
  const int hd = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  // Mean cross-entropy over target positions: row target_start + i - 1
  // scores target[i].
  Matrix dlogits = Matrix::Zero(n, vocab_size());
  for (int i = 0; i < t_len; ++i) {
    const int row = target_start + i - 1;
    Eigen::RowVectorXd logits = ws.logits.row(row);
    const double row_max = logits.maxCoeff();
    Eigen::RowVectorXd probs = (logits.array() - row_max).exp();
    probs /= probs.sum();
    probs[target[i]] -= 1.0;
    dlogits.row(row) = probs / static_cast<double>(t_len);
  }

  Matrix dlnf_y = dlogits * wu_.transpose();
  dlnf_y *= gamma;  // gradient entering the final norm layer
  Matrix dh = layernorm_backward(dlnf_y, lnf_g_, ws.lnf);

  for (int li = static_cast<int>(layers_.size()) - 1; li >= 0; --li) {
    const Layer& w = layers_[li];
    const auto& tape = ws.layers[li];

    // MLP branch
    Matrix dact = dh * w.w2.transpose();
    Matrix df1 =
        dact.cwiseProduct(tape.f1.unaryExpr([](double x) { return gelu_deriv(x); }));
    Matrix dln2 = df1 * w.w1.transpose();
    dln2 *= gamma;
    dh += layernorm_backward(dln2, w.ln2_g, tape.ln2);

    // attention branch
    Matrix dctx = dh * w.wo.transpose();
    Matrix dq = Matrix::Zero(n, d);
    Matrix dk = Matrix::Zero(n, d);
    Matrix dv = Matrix::Zero(n, d);
    for (int hh = 0; hh < heads; ++hh) {
      auto dctx_h = dctx.middleCols(hh * hd, hd);
      auto kh = tape.k.middleCols(hh * hd, hd);
      auto vh = tape.v.middleCols(hh * hd, hd);
      const Matrix& probs = tape.attn[hh];
      Matrix dprobs = dctx_h * vh.transpose();       // n x n
      dv.middleCols(hh * hd, hd) = probs.transpose() * dctx_h;
      Matrix dscores(n, n);
      for (int i = 0; i < n; ++i) {
        const double dot = dprobs.row(i).cwiseProduct(probs.row(i)).sum();
        dscores.row(i) =
            (probs.row(i).array() * (dprobs.row(i).array() - dot)).matrix();
      }
      dq.middleCols(hh * hd, hd) = dscores * kh * scale;
      dk.middleCols(hh * hd, hd) = dscores.transpose() * tape.q.middleCols(hh * hd, hd) * scale;
    }
    Matrix dln1 =
        dq * w.wq.transpose() + dk * w.wk.transpose() + dv * w.wv.transpose();
    dln1 *= gamma;
    dh += layernorm_backward(dln1, w.ln1_g, tape.ln1);
  }
  return dh;
}

std::shared_ptr<ToyLM> build_model(const ToyArch& arch, std::uint64_t seed) {
  return std::make_shared<ToyLM>(arch, seed);
}

}  // namespace tokenforce
