#include <doctest.h>

#include <cmath>
#include <memory>

#include "fixtures.hpp"
#include "ltla/base_lm.hpp"
#include "ltla/errors.hpp"
#include "ltla/oracle.hpp"

using namespace ltla;

TEST_SUITE("oracle") {

TEST_CASE("event probabilities") {
  const HmmParams p = fixtures::canonical();
  const auto model = oracle::hmm_model(p);
  const TokenSequence ctx{0};
  CHECK(oracle::enumerate_event_prob(model, ctx, [](auto, auto) { return true; }, 4) ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK(oracle::enumerate_event_prob(model, ctx, oracle::token_at(1, 0), 1) == doctest::Approx(0.644).epsilon(1e-12));
  CHECK(oracle::enumerate_event_prob(model, ctx, oracle::contains_all({{1, 1, 1, 1}}), 3) == 0.0);
}

TEST_CASE("size guard") {
  CHECK(oracle::checked_count(10, 6) == 1000000);
  CHECK_THROWS_AS(oracle::checked_count(10, 7), SizeGuardError);
  const auto model = oracle::hmm_model(fixtures::canonical());
  CHECK_THROWS_AS(oracle::enumerate_continuation_dist(model, {}, 20), SizeGuardError);
}

TEST_CASE("mutual information bound") {
  SUBCASE("one state") {
    Rng rng(91);
    const HmmParams p = fixtures::random_hmm(1, 3, rng);
    CHECK(std::abs(oracle::enumerate_mutual_information(p, 2, 4)) < 1e-12);
  }
  SUBCASE("copy chain attains log 2") {
    const HmmParams p(Vocabulary::numeric(2), {0.5, 0.5}, DenseMatrix::identity(2),
                      DenseMatrix(2, 2, {1.0, 0.0, 0.0, 1.0}), 8);
    CHECK(oracle::enumerate_mutual_information(p, 2, 4) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("random HMMs") {
    Rng rng(92);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t h = 2 + rng.below(2);
      const HmmParams p = fixtures::random_hmm(h, 2 + rng.below(2), rng);
      const std::size_t t = 2 + rng.below(3);
      const double mi = oracle::enumerate_mutual_information(p, t, 4);
      CHECK(mi >= 0.0);
      CHECK(mi <= std::log(double(h)) + 1e-9);
    }
  }
  SUBCASE("hybrid chain") {
    Rng rng(93);
    const TabularLm lm = TabularLm::planted(2, 0.9, 0.05);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t h = 2 + rng.below(2);
      const HmmParams p = fixtures::random_hmm(h, 2, rng);
      EncoderHead head = EncoderHead::linear(lm.feature_dim(), h);
      auto flat = head.flat();
      for (double& x : flat) x = 3.0 * rng.normal();
      head.set_flat(flat);
      const double mi = oracle::enumerate_mutual_information_hybrid(p, head, lm, 2 + rng.below(3), 4);
      CHECK(mi <= std::log(double(h)) + 1e-9);
    }
  }
  CHECK_THROWS_AS(oracle::enumerate_mutual_information(fixtures::canonical(), 1, 4), DomainError);
}

TEST_CASE("continuation distributions") {
  const TabularLm lm = TabularLm::planted(3, 0.5, 0.3);
  const auto model = oracle::lm_model(lm);
  const TokenSequence ctx{2, 0};
  const auto dist = oracle::enumerate_continuation_dist(model, ctx, 3);
  double s = 0.0;
  for (double x : dist) s += x;
  CHECK(std::abs(s - 1.0) < 1e-9);

  LmState st = lm.initial_state();
  for (Token t : ctx) st = lm.advance(st, t);
  const auto next = lm.next_dist(st);
  for (Token v = 0; v < 3; ++v) {
    double m = 0.0;
    for (std::size_t i = 0; i < 9; ++i) m += dist[v * 9 + i];
    CHECK(std::abs(m - next[v]) < 1e-12);
  }

  CHECK(oracle::kl_divergence(dist, dist) == 0.0);
  Rng rng(94);
  const auto hybrid = oracle::hybrid_model(fixtures::random_hmm(2, 3, rng), EncoderHead::linear(lm.feature_dim(), 2), lm);
  const auto q = oracle::enumerate_continuation_dist(hybrid, ctx, 3);
  double sq = 0.0;
  for (double x : q) sq += x;
  CHECK(std::abs(sq - 1.0) < 1e-9);
  CHECK(oracle::kl_divergence(dist, q) > 0.0);
  CHECK(std::isinf(oracle::kl_divergence(std::vector<double>{0.5, 0.5}, std::vector<double>{1.0, 0.0})));
}

TEST_CASE("decode_index puts the first token first") {
  CHECK(oracle::decode_index(5, 2, 3) == TokenSequence{1, 0, 1});
  CHECK(oracle::decode_index(0, 3, 2) == TokenSequence{0, 0});
}

}  // TEST_SUITE
