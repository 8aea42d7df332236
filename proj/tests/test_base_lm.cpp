#include <doctest.h>

#include <cmath>
#include <memory>
#include <sstream>

#include "fixtures.hpp"
#include "ltla/base_lm.hpp"
#include "ltla/errors.hpp"
#include "ltla/rng.hpp"

using namespace ltla;

namespace {

LmState state_of(const BaseLm& lm, const TokenSequence& ctx) {
  LmState s = lm.initial_state();
  for (Token t : ctx) s = lm.advance(s, t);
  return s;
}

}  // namespace

TEST_SUITE("base_lm") {

TEST_CASE("order-0 model returns its row everywhere") {
  const TabularLm lm = TabularLm::iid({0.7, 0.3});
  for (const TokenSequence& ctx : {TokenSequence{}, TokenSequence{0}, TokenSequence{1, 1, 0}})
    CHECK(lm.next_dist(state_of(lm, ctx)) == std::vector<double>{0.7, 0.3});
  CHECK_NOTHROW(check_lm_conformance(lm));
}

TEST_CASE("planted model favors the first token") {
  const TabularLm lm = TabularLm::planted(2, 0.9, 0.0);
  CHECK(lm.long_range_switch());
  for (Token b : {0u, 1u})
    for (Token prev : {0u, 1u}) {
      const auto row = lm.next_dist(state_of(lm, {b, prev}));
      const Token other = 1 - b;
      CHECK(row[b] - row[other] == doctest::Approx(0.9).epsilon(1e-12));
      CHECK(row[0] + row[1] == doctest::Approx(1.0).epsilon(1e-12));
    }
  CHECK_NOTHROW(check_lm_conformance(lm));
  CHECK_THROWS_AS(TabularLm::planted(2, 0.9, 0.2), DomainError);
}

TEST_CASE("rows are validated at load") {
  CHECK_THROWS_AS(TabularLm(2, 0, {0.5, 0.5}, {{0.6, 0.5}}, false), ValidationError);
  CHECK_THROWS_AS(TabularLm(2, 0, {0.5, 0.4}, {{0.5, 0.5}}, false), ValidationError);
  CHECK_THROWS_AS(TabularLm(2, 1, {0.5, 0.5}, {{0.5, 0.5}}, false), ValidationError);
  CHECK_NOTHROW(TabularLm(2, 0, {0.5, 0.5}, {{0.5 + 1e-10, 0.5}}, false));
}

TEST_CASE("sampling") {
  const TabularLm det = TabularLm::iid({1.0, 0.0});
  CHECK(lm_sample(det, 5, 3) == TokenSequence{0, 0, 0, 0, 0});
  const TabularLm lm = TabularLm::planted(3, 0.6, 0.2);
  CHECK(lm_sample(lm, 12, 77) == lm_sample(lm, 12, 77));
  CHECK(lm_sample(lm, 12, 77) != lm_sample(lm, 12, 78));
}

TEST_CASE("bigram counts match the tables") {
  // Order 1, no switch: x_2 | x_1 is exactly one table row.
  const std::vector<double> first{0.5, 0.3, 0.2};
  const std::vector<double> table{0.6, 0.3, 0.1, 0.2, 0.2, 0.6, 0.1, 0.8, 0.1};
  const TabularLm lm(3, 1, first, {table}, false);
  const std::size_t n = 100000;
  std::vector<double> pair(9, 0.0);
  std::vector<double> single(3, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = lm_sample(lm, 2, derive_seed(2024, "bigram") + i);
    pair[s[0] * 3 + s[1]] += 1.0;
    single[s[0]] += 1.0;
  }
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b) {
      // Conditional frequency against the table row.
      const double p = table[a * 3 + b];
      const double se = std::sqrt(p * (1 - p) / single[a]);
      CHECK(std::abs(pair[a * 3 + b] / single[a] - p) < 3 * se);
    }
}

TEST_CASE("featurize") {
  const TabularLm lm = TabularLm::planted(2, 0.9, 0.0);
  CHECK(lm.featurize(lm.initial_state()) == std::vector<double>{0, 0, 0, 0});
  CHECK(lm.featurize(state_of(lm, {1, 0})) == std::vector<double>{0, 1, 1, 0});

  // Injective on (first token, last k tokens).
  const TabularLm lm3 = TabularLm::planted(3, 0.5, 0.2);
  std::vector<std::vector<double>> seen;
  for (Token a = 0; a < 3; ++a)
    for (Token b = 0; b < 3; ++b) {
      const auto f = lm3.featurize(state_of(lm3, {a, 2, b}));
      for (const auto& g : seen) CHECK(g != f);
      seen.push_back(f);
      CHECK(f == lm3.featurize(state_of(lm3, {a, 0, 1, b})));
    }
}

TEST_CASE("HMM-backed LM") {
  auto p = std::make_shared<const HmmParams>(fixtures::canonical());
  const HmmLm lm(p);
  CHECK_NOTHROW(check_lm_conformance(lm));
  const auto d = lm.next_dist(state_of(lm, {0}));
  CHECK(d[0] == doctest::Approx(0.644).epsilon(1e-12));
  CHECK(lm_loglik(lm, TokenSequence{0, 1, 1}) == doctest::Approx(joint_loglik(TokenSequence{0, 1, 1}, *p)).epsilon(1e-12));
  CHECK(lm.featurize(lm.initial_state()) == std::vector<double>{0, 0});
}

TEST_CASE("stream adapter replays an external process") {
  std::istringstream in(R"({"dist": [0.25, 0.75], "features": [1, 2]}
{"dist": [1.0, 0.0], "features": [3, 4]}
)");
  const StreamLm lm(in);
  CHECK(lm.vocab_size() == 2);
  CHECK(lm.feature_dim() == 2);
  CHECK(lm.steps() == 2);
  CHECK(lm.next_dist(lm.initial_state()) == std::vector<double>{0.25, 0.75});
  const LmState s = lm.advance(lm.initial_state(), 1);
  CHECK(lm.next_dist(s) == std::vector<double>{1.0, 0.0});
  CHECK(lm.featurize(s) == std::vector<double>{3, 4});

  std::istringstream bad(R"({"dist": [0.5, 0.6], "features": []})");
  CHECK_THROWS_AS(StreamLm{bad}, ValidationError);
}

TEST_CASE("conformance check rejects a broken LM") {
  struct Broken final : BaseLm {
    std::size_t vocab_size() const override { return 2; }
    std::size_t feature_dim() const override { return 1; }
    LmState initial_state() const override { return {}; }
    LmState advance(const LmState& s, Token t) const override {
      LmState n = s;
      n.tokens.push_back(t);
      return n;
    }
    std::vector<double> next_dist(const LmState&) const override { return {0.5, 0.4}; }
    std::vector<double> featurize(const LmState&) const override { return {0.0}; }
  };
  CHECK_THROWS_AS(check_lm_conformance(Broken{}), ValidationError);
}

}  // TEST_SUITE
