#include "tokenforce/toylm.hpp"

#include "tokenforce/oracle.hpp"

#include <doctest.h>

using namespace tokenforce;

namespace {

ToyArch small_arch() {
  ToyArch arch;
  arch.layers = 1;
  arch.heads = 2;
  arch.vocab = VocabSpec(12, {}, 8);
  arch.max_seq = 32;
  return arch;
}

TokenSeq random_tokens(int n, int vocab, Rng& rng) {
  std::uniform_int_distribution<int> pick(0, vocab - 1);
  TokenSeq out(n);
  for (Token& t : out) t = pick(rng);
  return out;
}

}  // namespace

TEST_CASE("same (arch, seed) builds identical models, different seeds differ") {
  ToyArch arch = small_arch();
  auto a = build_model(arch, 7);
  auto b = build_model(arch, 7);
  auto c = build_model(arch, 8);
  CHECK(a->embedding_matrix() == b->embedding_matrix());
  CHECK(a->unembedding_matrix() == b->unembedding_matrix());
  TokenSeq probe = {1, 2, 3, 4};
  CHECK(a->forward_logits(probe) == b->forward_logits(probe));
  CHECK(a->embedding_matrix() != c->embedding_matrix());
}

TEST_CASE("invalid architectures are rejected") {
  ToyArch arch = small_arch();
  arch.layers = 0;
  CHECK_THROWS_AS(build_model(arch, 1), std::invalid_argument);
  arch = small_arch();
  arch.vocab = VocabSpec(3, {}, 8);
  CHECK_THROWS_AS(build_model(arch, 1), std::invalid_argument);
  arch = small_arch();
  arch.heads = 3;  // does not divide D=8
  CHECK_THROWS_AS(build_model(arch, 1), std::invalid_argument);
}

TEST_CASE("forward_logits shape, purity and input validation") {
  auto model = build_model(small_arch(), 3);
  TokenSeq tokens = {0, 5, 11, 2, 7};
  Matrix logits = model->forward_logits(tokens);
  CHECK(logits.rows() == 5);
  CHECK(logits.cols() == 12);
  CHECK(model->forward_logits(tokens) == logits);
  TokenSeq bad = {0, 12};
  CHECK_THROWS_AS(model->forward_logits(bad), std::invalid_argument);
}

TEST_CASE("causality: a position's logits ignore later tokens") {
  auto model = build_model(small_arch(), 11);
  TokenSeq a = {3, 1, 4, 1, 5};
  TokenSeq b = {3, 1, 4, 9, 2};
  Matrix la = model->forward_logits(a);
  Matrix lb = model->forward_logits(b);
  CHECK((la.topRows(3) - lb.topRows(3)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((la.row(3) - lb.row(3)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("n_nonembed counts exactly the block and final-norm scalars") {
  ToyArch arch = small_arch();
  auto model = build_model(arch, 1);
  const std::int64_t d = 8;
  const std::int64_t per_layer = 12 * d * d + 4 * d;
  CHECK(model->nonembed_params() == 1 * per_layer + 2 * d);

  arch.layers = 2;
  arch.vocab = VocabSpec(64, {}, 32);
  arch.heads = 2;
  auto big = build_model(arch, 1);
  CHECK(big->nonembed_params() == 2 * (12 * 32 * 32 + 4 * 32) + 2 * 32);
}

TEST_CASE("backward_embed matches central finite differences") {
  Rng rng = make_rng(99);
  for (int trial = 0; trial < 4; ++trial) {
    ToyArch arch = small_arch();
    arch.layers = trial % 2 == 0 ? 1 : 2;
    auto model = build_model(arch, 100 + trial);
    TokenSeq full = random_tokens(9, arch.vocab.size, rng);
    const int suffix_begin = 1, suffix_end = 4, target_start = 5;
    TokenSeq target(full.begin() + target_start, full.end());

    Matrix analytic = backward_embed(*model, full, suffix_begin, suffix_end,
                                     target, target_start);
    Matrix numeric = finite_diff_grad(*model, full, suffix_begin, suffix_end,
                                      target, target_start);
    CHECK(max_relative_error(analytic, numeric) < 1e-4);
  }
}

TEST_CASE("gradient tap: gamma=1 is identical to the default") {
  auto model = build_model(small_arch(), 5);
  Rng rng = make_rng(1);
  TokenSeq full = random_tokens(8, 12, rng);
  TokenSeq target(full.begin() + 5, full.end());
  Matrix plain = backward_embed(*model, full, 0, 3, target, 5);
  Matrix tapped = backward_embed(*model, full, 0, 3, target, 5, GradTap(1.0));
  CHECK(plain == tapped);
}

TEST_CASE("gradient tap linearity at each normalization boundary") {
  // In a one-layer model every input-to-loss path crosses the final norm
  // and optionally each block norm, so the tapped gradient decomposes as
  // g(gamma) = gamma*A + gamma^2*B + gamma^3*C with fixed A, B, C. Fit the
  // three coefficients from three gamma probes and predict a fourth.
  auto model = build_model(small_arch(), 5);
  Rng rng = make_rng(2);
  TokenSeq full = random_tokens(8, 12, rng);
  TokenSeq target(full.begin() + 5, full.end());
  auto tapped = [&](double gamma) {
    return backward_embed(*model, full, 0, 3, target, 5, GradTap(gamma));
  };

  const double g0 = 1.0, g1 = 0.5, g2 = 0.25, probe = 2.0;
  Matrix y0 = tapped(g0), y1 = tapped(g1), y2 = tapped(g2);
  Eigen::Matrix3d vandermonde;
  vandermonde << g0, g0 * g0, g0 * g0 * g0,
                 g1, g1 * g1, g1 * g1 * g1,
                 g2, g2 * g2, g2 * g2 * g2;
  const Eigen::Matrix3d inv = vandermonde.inverse();
  Matrix a = inv(0, 0) * y0 + inv(0, 1) * y1 + inv(0, 2) * y2;
  Matrix b = inv(1, 0) * y0 + inv(1, 1) * y1 + inv(1, 2) * y2;
  Matrix c = inv(2, 0) * y0 + inv(2, 1) * y1 + inv(2, 2) * y2;

  Matrix predicted = probe * a + probe * probe * b + probe * probe * probe * c;
  Matrix actual = tapped(probe);
  CHECK((predicted - actual).cwiseAbs().maxCoeff() /
            actual.cwiseAbs().maxCoeff() <
        1e-9);
  // distinct powers genuinely appear: the pure-skip coefficient and at least
  // one deeper path are nonzero
  CHECK(a.cwiseAbs().maxCoeff() > 0.0);
  CHECK((b.cwiseAbs().maxCoeff() > 0.0 || c.cwiseAbs().maxCoeff() > 0.0));
}

TEST_CASE("backward_onehot is the embedding-row projection of backward_embed") {
  auto model = build_model(small_arch(), 17);
  Rng rng = make_rng(3);
  TokenSeq full = random_tokens(10, 12, rng);
  TokenSeq target(full.begin() + 6, full.end());
  Matrix ge = backward_embed(*model, full, 1, 5, target, 6);
  Matrix go = backward_onehot(*model, full, 1, 5, target, 6);
  CHECK(go.rows() == 4);
  CHECK(go.cols() == 12);
  for (int l = 0; l < go.rows(); ++l) {
    for (int v = 0; v < 12; ++v) {
      const double dot = ge.row(l).dot(model->embedding_matrix().row(v));
      CHECK(std::abs(go(l, v) - dot) <= 1e-10);
    }
  }
}

TEST_CASE("slot validation rejects overlaps and bad ranges") {
  auto model = build_model(small_arch(), 17);
  TokenSeq full = {1, 2, 3, 4, 5, 6};
  TokenSeq target = {5, 6};
  CHECK_THROWS_AS(
      backward_embed(*model, full, 2, 5, target, 4),  // overlap
      std::invalid_argument);
  CHECK_THROWS_AS(backward_embed(*model, full, 0, 0, target, 4),
                  std::invalid_argument);
  CHECK_THROWS_AS(backward_embed(*model, full, 0, 2, TokenSeq{}, 4),
                  std::invalid_argument);
}

TEST_CASE("greedy decode is deterministic argmax continuation") {
  auto model = build_model(small_arch(), 23);
  TokenSeq prefix = {1, 2, 3};
  TokenSeq a = greedy_decode(*model, prefix, 4);
  TokenSeq b = greedy_decode(*model, prefix, 4);
  CHECK(a == b);
  CHECK(a.size() == 4);
  // decoding one token then continuing equals decoding all at once
  TokenSeq first = greedy_decode(*model, prefix, 1);
  TokenSeq extended = prefix;
  extended.push_back(first[0]);
  TokenSeq rest = greedy_decode(*model, extended, 3);
  TokenSeq joined = first;
  joined.insert(joined.end(), rest.begin(), rest.end());
  CHECK(joined == a);
}

TEST_CASE("soft_forward at exact one-hot rows reproduces the hard loss") {
  auto model = build_model(small_arch(), 31);
  Rng rng = make_rng(4);
  TokenSeq prefix = random_tokens(3, 12, rng);
  TokenSeq suffix = random_tokens(4, 12, rng);
  TokenSeq target = random_tokens(3, 12, rng);

  SoftSuffix soft;
  soft.z.assign(2, Matrix::Zero(4, 12));
  for (int l = 0; l < 4; ++l) {
    soft.z[0](l, suffix[l]) = 1.0;
    soft.z[1](l, suffix[l]) = 1.0;
  }
  SoftForwardResult res = soft_forward(*model, prefix, soft, {}, target);

  TokenSeq full = prefix;
  full.insert(full.end(), suffix.begin(), suffix.end());
  full.insert(full.end(), target.begin(), target.end());
  ScoreResult hard = model->score_tokens(full, target, 7);

  for (int i = 0; i < 3; ++i) {
    CHECK(res.losses(0, i) == doctest::Approx(hard.position_losses[i])
                                  .epsilon(1e-9));
  }
  // identical restarts produce identical losses
  CHECK(res.losses.row(0) == res.losses.row(1));
  CHECK(res.grad_z[0] == res.grad_z[1]);
}

TEST_CASE("soft_forward gradient matches finite differences on z") {
  auto model = build_model(small_arch(), 37);
  Rng rng = make_rng(5);
  TokenSeq prefix = random_tokens(2, 12, rng);
  TokenSeq target = random_tokens(2, 12, rng);
  const int len = 3;

  SoftSuffix soft;
  soft.z.assign(1, Matrix(len, 12));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int l = 0; l < len; ++l) {
    Eigen::RowVectorXd row(12);
    for (int v = 0; v < 12; ++v) row[v] = normal(rng);
    row = (row.array() - row.maxCoeff()).exp();
    soft.z[0].row(l) = row / row.sum();
  }

  SoftForwardResult res = soft_forward(*model, prefix, soft, {}, target);

  // central differences on raw z entries (off-simplex probes are fine: the
  // loss is defined for any mixing weights)
  const double h = 1e-5;
  Matrix numeric(len, 12);
  for (int l = 0; l < len; ++l) {
    for (int v = 0; v < 12; ++v) {
      SoftSuffix up = soft;
      up.z[0](l, v) += h;
      SoftSuffix down = soft;
      down.z[0](l, v) -= h;
      // bypass row-sum validation by scoring manually
      auto eval = [&](const SoftSuffix& s) {
        Matrix embeds(prefix.size() + len + target.size(), 8);
        embeds.topRows(2) = model->embed_tokens(prefix);
        embeds.middleRows(2, len) = s.z[0] * model->embedding_matrix();
        embeds.bottomRows(2) = model->embed_tokens(target);
        return model->score_embeds(embeds, target, 5).mean_loss();
      };
      numeric(l, v) = (eval(up) - eval(down)) / (2 * h);
    }
  }
  CHECK(max_relative_error(res.grad_z[0], numeric) < 1e-4);
}

TEST_CASE("soft gradient at exact one-hot rows equals the one-hot gradient") {
  // the soft-forward gradient with respect to z is, by the embedding's
  // linearity, the finite-difference-validated relaxed one-hot gradient;
  // at exact one-hot rows it must coincide with backward_onehot
  auto model = build_model(small_arch(), 53);
  Rng rng = make_rng(6);
  TokenSeq prefix = random_tokens(2, 12, rng);
  TokenSeq suffix = random_tokens(3, 12, rng);
  TokenSeq target = random_tokens(2, 12, rng);

  SoftSuffix soft;
  soft.z.assign(1, Matrix::Zero(3, 12));
  for (int l = 0; l < 3; ++l) soft.z[0](l, suffix[l]) = 1.0;
  SoftForwardResult res = soft_forward(*model, prefix, soft, {}, target);

  TokenSeq full = prefix;
  full.insert(full.end(), suffix.begin(), suffix.end());
  full.insert(full.end(), target.begin(), target.end());
  Matrix onehot = backward_onehot(*model, full, 2, 5, target, 5);
  CHECK((res.grad_z[0] - onehot).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("soft_forward rejects rows that do not sum to one") {
  auto model = build_model(small_arch(), 41);
  SoftSuffix soft;
  soft.z.assign(1, Matrix::Constant(2, 12, 0.05));  // rows sum to 0.6
  TokenSeq prefix = {1};
  TokenSeq target = {2};
  CHECK_THROWS_AS(soft_forward(*model, prefix, soft, {}, target),
                  std::invalid_argument);
}
