#include "tokenforce/oracle.hpp"

#include "tokenforce/analytic.hpp"
#include "tokenforce/toylm.hpp"

#include <doctest.h>

#include <cmath>

using namespace tokenforce;

TEST_CASE("exhaustive_best enumerates exactly |space|^L evaluations") {
  auto lm = make_uniform_lm(8);
  VocabSpec vocab(8, {0, 1, 2, 3}, 8);
  SearchSpace space = SearchSpace::excluding_controls(vocab);  // 4 ids
  ContextTemplate tmpl{{}, 0, 2};
  TargetSpec target{"t", {5, 6}};
  ExhaustiveResult res = exhaustive_best(*lm, tmpl, target, space);
  CHECK(res.evaluations == 16);
  CHECK(res.loss == doctest::Approx(std::log(8.0)).epsilon(1e-12));
  // lexicographic tie-break: everything ties on a uniform model
  CHECK(res.suffix == TokenSeq{4, 4});
}

TEST_CASE("exhaustive_best refuses above the cap, reporting the count") {
  auto lm = make_uniform_lm(8);
  SearchSpace space = SearchSpace::full_vocab(lm->vocab());
  ContextTemplate tmpl{{}, 0, 4};
  TargetSpec target{"t", {5}};
  try {
    exhaustive_best(*lm, tmpl, target, space, 1000);
    FAIL("expected EnumerationCapError");
  } catch (const EnumerationCapError& e) {
    CHECK(e.required == 4096);
    CHECK(e.cap == 1000);
  }
}

TEST_CASE("oracle minimizer on the pointer double ends with target[0]-1") {
  const int v = 8;
  auto lm = make_pointer_lm(v, 40.0);
  SearchSpace space = SearchSpace::full_vocab(lm->vocab());
  ContextTemplate tmpl{{}, 0, 2};
  // successor-chain target starting at 3
  TargetSpec target{"t", {3, 4, 5}};
  ExhaustiveResult res = exhaustive_best(*lm, tmpl, target, space);
  CHECK(res.suffix[1] == 2);  // (3 - 1) mod 8
  CHECK(res.suffix[0] == 0);  // free position resolves lexicographically
  CHECK(res.loss < 1e-9);

  // minimality: the oracle is never beaten by a probe suffix
  for (Token a = 0; a < v; ++a) {
    const double probe =
        token_forcing_loss(*lm, tmpl, TokenSeq{1, a}, target).mean;
    CHECK(res.loss <= probe + 1e-12);
  }
}

TEST_CASE("finite_diff_grad on the uniform double is a zero matrix") {
  auto lm = make_uniform_lm(8);
  TokenSeq full = {1, 2, 3, 4};
  TokenSeq target(full.begin() + 2, full.end());
  Matrix g = finite_diff_grad(*lm, full, 0, 2, target, 2);
  CHECK(g.cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("independent_loss agrees with token_forcing_loss on random instances") {
  auto model = build_model(ToyArch{2, 2, VocabSpec(16, {}, 16), 64}, 9);
  ContextTemplate tmpl{{{"user", {1, 2}}}, 1, 3};
  Rng rng = make_rng(55);
  std::uniform_int_distribution<int> tok(0, 15);
  for (int trial = 0; trial < 100; ++trial) {
    TokenSeq suffix = {tok(rng), tok(rng), tok(rng)};
    TargetSpec target{"t", {tok(rng), tok(rng)}};
    const double via_objective =
        token_forcing_loss(*model, tmpl, suffix, target).mean;
    AssembledContext ctx = assemble(tmpl, suffix);
    TokenSeq full = ctx.full;
    full.insert(full.end(), target.tokens.begin(), target.tokens.end());
    const double via_oracle =
        independent_loss(*model, full, ctx.target_start, target.length());
    CHECK(std::abs(via_objective - via_oracle) < 1e-9);
  }
}

TEST_CASE("independent_loss on the uniform double returns ln|V|") {
  auto lm = make_uniform_lm(32);
  TokenSeq full = {3, 4, 5, 6};
  CHECK(independent_loss(*lm, full, 2, 2) ==
        doctest::Approx(std::log(32.0)).epsilon(1e-12));
  CHECK_THROWS_AS(independent_loss(*lm, full, 2, 0), std::invalid_argument);
}
