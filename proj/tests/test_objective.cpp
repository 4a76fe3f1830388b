#include "tokenforce/objective.hpp"

#include "tokenforce/analytic.hpp"
#include "tokenforce/toylm.hpp"

#include <doctest.h>

#include <cmath>

using namespace tokenforce;

TEST_CASE("assemble splices the suffix at the slot") {
  SUBCASE("degenerate template") {
    ContextTemplate tmpl{{}, 0, 3};
    AssembledContext ctx = assemble(tmpl, TokenSeq{1, 2, 3});
    CHECK(ctx.full == TokenSeq{1, 2, 3});
    CHECK(ctx.suffix_begin == 0);
    CHECK(ctx.suffix_end == 3);
    CHECK(ctx.target_start == 3);
  }
  SUBCASE("prefix and postfix segments") {
    ContextTemplate tmpl{{{"user", {9, 9}}, {"input", {8}}}, 1, 1};
    AssembledContext ctx = assemble(tmpl, TokenSeq{1});
    CHECK(ctx.full == TokenSeq{9, 9, 1, 8});
    CHECK(ctx.suffix_begin == 2);
    CHECK(ctx.suffix_end == 3);
    CHECK(ctx.target_start == 4);
  }
}

TEST_CASE("assemble validates length and the search space") {
  ContextTemplate tmpl{{}, 0, 2};
  CHECK_THROWS_AS(assemble(tmpl, TokenSeq{1}), std::invalid_argument);

  VocabSpec vocab(8, {0, 1}, 8);
  SearchSpace space = SearchSpace::excluding_controls(vocab);
  CHECK_THROWS_AS(assemble(tmpl, TokenSeq{1, 4}, &space),
                  std::invalid_argument);
  CHECK_NOTHROW(assemble(tmpl, TokenSeq{2, 4}, &space));
}

TEST_CASE("templates may carry control tokens; suffixes may not when restricted") {
  VocabSpec vocab(8, {0}, 8);
  ContextTemplate tmpl{{{"system", {0, 5}}}, 1, 1};
  tmpl.validate(vocab);
  SearchSpace space = SearchSpace::excluding_controls(vocab);
  AssembledContext ctx = assemble(tmpl, TokenSeq{3}, &space);
  CHECK(ctx.full == TokenSeq{0, 5, 3});
}

TEST_CASE("token_forcing_loss positivity and per-position breakdown") {
  auto model = build_model(ToyArch{1, 2, VocabSpec(16, {}, 8), 64}, 5);
  ContextTemplate tmpl{{{"user", {3, 1}}}, 1, 2};
  TargetSpec target{"t", {7, 2, 9}};
  LossBreakdown loss = token_forcing_loss(*model, tmpl, TokenSeq{4, 5}, target);
  CHECK(loss.mean > 0.0);
  CHECK(loss.per_position.size() == 3);
  CHECK(loss.mean ==
        doctest::Approx(loss.per_position.mean()).epsilon(1e-12));
  CHECK(loss.target_logits.rows() == 3);
  CHECK(loss.target_logits.cols() == 16);
}

TEST_CASE("mispredictions counts argmax misses with low-id tie break") {
  Matrix logits = Matrix::Zero(3, 4);
  logits(0, 2) = 5.0;  // predicts 2
  logits(1, 1) = 5.0;  // predicts 1
  // row 2 all equal: tie-break predicts 0
  TokenSeq target = {2, 3, 0};
  CHECK(mispredictions(logits, target) == 1);

  // all-uniform rows against a target avoiding token 0 miss everywhere
  Matrix flat = Matrix::Zero(3, 4);
  CHECK(mispredictions(flat, TokenSeq{1, 2, 3}) == 3);
  CHECK_THROWS_AS(mispredictions(flat, TokenSeq{1}), std::invalid_argument);
}

TEST_CASE("mispredictions against a brute recount on random instances") {
  Rng rng = make_rng(12);
  std::uniform_int_distribution<int> tok(0, 9);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix logits(5, 10);
    for (int i = 0; i < 5; ++i) {
      for (int v = 0; v < 10; ++v) logits(i, v) = normal(rng);
    }
    TokenSeq target(5);
    for (Token& t : target) t = tok(rng);
    int brute = 0;
    for (int i = 0; i < 5; ++i) {
      int best = 0;
      for (int v = 1; v < 10; ++v) {
        if (logits(i, v) > logits(i, best)) best = v;
      }
      if (best != target[i]) ++brute;
    }
    CHECK(mispredictions(logits, target) == brute);
  }
}

TEST_CASE("greedy_success matches exact target reproduction") {
  auto lm = make_pointer_lm(8, 40.0);
  ContextTemplate tmpl{{}, 0, 2};
  TargetSpec chain{"t", {5, 6, 7}};
  CHECK(greedy_success(*lm, tmpl, TokenSeq{1, 4}, chain));
  TargetSpec broken{"t", {5, 6, 1}};
  CHECK_FALSE(greedy_success(*lm, tmpl, TokenSeq{1, 4}, broken));
}

TEST_CASE("greedy success implies per-position argmax equals the target") {
  Rng rng = make_rng(77);
  std::uniform_int_distribution<int> tok(0, 15);
  auto model = build_model(ToyArch{1, 2, VocabSpec(16, {}, 8), 64}, 21);
  ContextTemplate tmpl{{}, 0, 3};
  int successes = 0;
  for (int trial = 0; trial < 40; ++trial) {
    TokenSeq suffix = {tok(rng), tok(rng), tok(rng)};
    AssembledContext ctx = assemble(tmpl, suffix);
    // force "success" instances by decoding the model's own continuation
    TargetSpec target{"t", greedy_decode(*model, ctx.full, 3)};
    REQUIRE(greedy_success(*model, tmpl, suffix, target));
    ++successes;
    LossBreakdown loss = token_forcing_loss(*model, tmpl, suffix, target);
    CHECK(mispredictions(loss.target_logits, target.tokens) == 0);
  }
  CHECK(successes == 40);
}

TEST_CASE("sample_targets is deterministic and avoids control ids") {
  VocabSpec vocab(8, {0, 1, 2, 3, 4, 6, 7}, 8);  // only id 5 remains
  auto targets = sample_targets(vocab, 4, 3, 42);
  for (const TargetSpec& t : targets) {
    CHECK(t.tokens == TokenSeq{5, 5, 5, 5});
  }
  auto again = sample_targets(vocab, 4, 3, 42);
  for (int i = 0; i < 3; ++i) CHECK(targets[i].tokens == again[i].tokens);
  CHECK(targets[0].id != targets[1].id);
}

TEST_CASE("sample_targets frequencies are uniform within 5 sigma") {
  VocabSpec vocab(8, {}, 8);
  auto targets = sample_targets(vocab, 1, 10000, 7);
  std::vector<int> counts(8, 0);
  for (const TargetSpec& t : targets) ++counts[t.tokens[0]];
  const double expect = 10000.0 / 8.0;
  const double sigma = std::sqrt(10000.0 * (1.0 / 8.0) * (7.0 / 8.0));
  for (int v = 0; v < 8; ++v) {
    CHECK(std::abs(counts[v] - expect) < 5.0 * sigma);
  }
}

TEST_CASE("sample_targets rejects an empty support") {
  CHECK_THROWS_AS(VocabSpec(4, {0, 1, 2, 3}, 4), std::invalid_argument);
}
