#include <doctest.h>

#include <cmath>
#include <memory>
#include <sstream>

#include "fixtures.hpp"
#include "ltla/base_lm.hpp"
#include "ltla/distill.hpp"
#include "ltla/errors.hpp"
#include "ltla/oracle.hpp"

using namespace ltla;

namespace {

std::vector<TokenSequence> random_token_data(std::size_t n, std::size_t len, std::size_t v, Rng& rng) {
  std::vector<TokenSequence> data(n, TokenSequence(len));
  for (auto& s : data)
    for (auto& t : s) t = static_cast<Token>(rng.below(v));
  return data;
}

}  // namespace

TEST_SUITE("distill") {

TEST_CASE("dataset shape and determinism") {
  const TabularLm lm = TabularLm::planted(3, 0.6, 0.2);
  CHECK(DistillDataset{}.seq_len == 32);
  const DistillDataset d = sample_dataset(lm, 50, kDefaultSeqLen, 9, "planted");
  CHECK(d.records.size() == 50);
  CHECK_NOTHROW(d.validate());
  for (const auto& r : d.records) {
    CHECK(r.context.size() + r.continuation.size() == 32);
    CHECK(r.context.size() >= 1);
    CHECK(r.continuation.size() >= 1);
    LmState s = lm.initial_state();
    for (Token t : r.context) s = lm.advance(s, t);
    CHECK(r.features == lm.featurize(s));
  }
  const DistillDataset again = sample_dataset(lm, 50, kDefaultSeqLen, 9, "planted");
  for (std::size_t i = 0; i < 50; ++i) {
    CHECK(again.records[i].full() == d.records[i].full());
    CHECK(again.records[i].context == d.records[i].context);
  }
}

TEST_CASE("split positions are uniform") {
  const TabularLm lm = TabularLm::iid({0.5, 0.5});
  const std::size_t n = 100000;
  const std::size_t len = 32;
  const DistillDataset d = sample_dataset(lm, n, len, 17);
  std::vector<double> counts(len - 1, 0.0);
  for (const auto& r : d.records) counts[r.context.size() - 1] += 1.0;
  const double expected = double(n) / double(len - 1);
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // 99th percentile of chi-square with 30 degrees of freedom.
  CHECK(chi2 < 50.892);
}

TEST_CASE("jsonl round trip") {
  const TabularLm lm = TabularLm::planted(2, 0.7, 0.1);
  const DistillDataset d = sample_dataset(lm, 20, 6, 4, "planted-v2");
  std::stringstream io;
  d.write_jsonl(io);
  const DistillDataset back = DistillDataset::read_jsonl(io);
  CHECK(back.source == "planted-v2");
  CHECK(back.seq_len == 6);
  CHECK(back.seed == 4);
  REQUIRE(back.records.size() == 20);
  for (std::size_t i = 0; i < 20; ++i) {
    CHECK(back.records[i].context == d.records[i].context);
    CHECK(back.records[i].continuation == d.records[i].continuation);
    CHECK(back.records[i].features == d.records[i].features);
  }
  DistillDataset bad = d;
  bad.records[0].continuation.clear();
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("one-state EM recovers the unigram distribution") {
  const std::vector<TokenSequence> data{{0, 1, 2, 2}, {2, 2, 1}, {0}};
  EmConfig cfg;
  cfg.hidden = 1;
  cfg.iters = 1;
  const EmResult r = em_train_hmm(data, Vocabulary::numeric(3), cfg);
  const auto e = r.params.emission().to_dense();
  CHECK(e(0, 0) == doctest::Approx(2.0 / 8.0).epsilon(1e-12));
  CHECK(e(0, 1) == doctest::Approx(2.0 / 8.0).epsilon(1e-12));
  CHECK(e(0, 2) == doctest::Approx(4.0 / 8.0).epsilon(1e-12));
}

TEST_CASE("EM log-likelihood never decreases") {
  Rng rng(71);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t v = 2 + rng.below(3);
    const auto data = random_token_data(20, 3 + rng.below(6), v, rng);
    EmConfig cfg;
    cfg.hidden = 2 + rng.below(3);
    cfg.iters = 15;
    cfg.init_seed = static_cast<std::uint64_t>(trial);
    const EmResult r = em_train_hmm(data, Vocabulary::numeric(v), cfg);
    REQUIRE(r.loglik.size() == cfg.iters + 1);
    for (std::size_t i = 1; i < r.loglik.size(); ++i) CHECK(r.loglik[i] >= r.loglik[i - 1] - 1e-8);
    CHECK(std::abs(r.loglik.back() - total_loglik(data, r.params)) < 1e-8);
  }
}

TEST_CASE("Monarch-transition EM never decreases and stays stochastic") {
  Rng rng(72);
  for (int trial = 0; trial < 5; ++trial) {
    const auto data = random_token_data(20, 6, 3, rng);
    EmConfig cfg;
    cfg.hidden = 4;
    cfg.iters = 8;
    cfg.transition = TransitionKind::monarch;
    cfg.init_seed = static_cast<std::uint64_t>(trial);
    const EmResult r = em_train_hmm(data, Vocabulary::numeric(3), cfg);
    CHECK(r.params.transition().is_monarch());
    for (std::size_t i = 1; i < r.loglik.size(); ++i) CHECK(r.loglik[i] >= r.loglik[i - 1] - 1e-6);
    CHECK_NOTHROW(r.params.transition().validate_row_stochastic(1e-9, "transition"));
  }
}

TEST_CASE("EM approaches the generator on held-out data") {
  const HmmParams gen(Vocabulary::numeric(2), {0.5, 0.5}, DenseMatrix(2, 2, {0.95, 0.05, 0.05, 0.95}),
                      DenseMatrix(2, 2, {0.9, 0.1, 0.1, 0.9}), 64);
  std::vector<TokenSequence> train;
  std::vector<TokenSequence> test;
  for (std::size_t i = 0; i < 400; ++i) train.push_back(sample_sequence(gen, 30, 100 + i));
  for (std::size_t i = 0; i < 400; ++i) test.push_back(sample_sequence(gen, 30, 100000 + i));
  EmConfig cfg;
  cfg.hidden = 2;
  cfg.iters = 100;
  cfg.init_seed = 5;
  const EmResult r = em_train_hmm(train, Vocabulary::numeric(2), cfg);
  const double tokens = 400.0 * 30.0;
  const double gap = (total_loglik(test, gen) - total_loglik(test, r.params)) / tokens;
  MESSAGE("held-out gap (nats/token) = " << gap);
  CHECK(gap < 0.05);
}

TEST_CASE("perplexity of a uniform model is exactly 2") {
  const TabularLm lm = TabularLm::iid({0.5, 0.5});
  const DistillDataset d = sample_dataset(lm, 200, 10, 3);
  auto uniform = std::make_shared<const HmmParams>(Vocabulary::numeric(2), std::vector<double>{1.0},
                                                   DenseMatrix::identity(1), DenseMatrix(1, 2, 0.5), 16);
  const EvalReport rep = evaluate_perplexity({{"uniform", uniform, std::nullopt}}, d);
  CHECK(rep.row("uniform").perplexity == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(rep.row("uniform").clipped == 0);
  std::size_t in_buckets = 0;
  for (const auto& b : rep.row("uniform").buckets) {
    in_buckets += b.records;
    if (b.records > 0) CHECK(b.perplexity == doctest::Approx(2.0).epsilon(1e-12));
    else CHECK(std::isnan(b.perplexity));
  }
  CHECK(in_buckets == 200);
}

TEST_CASE("the generator reaches the entropy floor") {
  auto gen = std::make_shared<const HmmParams>(fixtures::canonical());
  const HmmLm lm(gen);
  const std::size_t len = 5;
  const DistillDataset d = sample_dataset(lm, 20000, len, 8);
  const EvalReport rep = evaluate_perplexity({{"generator", gen, std::nullopt}}, d);

  // Expected per-token NLL by enumeration: average over split positions of
  // H(X_{k+1:T} | X_{1:k}) / (T - k).
  const auto model = oracle::hmm_model(*gen);
  double floor = 0.0;
  for (std::size_t k = 1; k < len; ++k) {
    double h = 0.0;
    for (std::size_t ci = 0; ci < oracle::checked_count(2, k); ++ci) {
      const TokenSequence ctx = oracle::decode_index(ci, 2, k);
      const double pc = model.prob({}, ctx);
      for (double q : oracle::enumerate_continuation_dist(model, ctx, len - k))
        if (q > 0) h -= pc * q * std::log(q);
    }
    floor += h / double(len - k) / double(len - 1);
  }
  // Sampling spread of the per-record mean.
  double m = 0.0;
  double m2 = 0.0;
  for (const auto& r : d.records) {
    const double x = -continuation_loglik(filter_prefix(r.context, *gen), r.continuation, *gen) /
                     double(r.continuation.size());
    m += x;
    m2 += x * x;
  }
  const double n = double(d.records.size());
  const double se = std::sqrt((m2 / n - (m / n) * (m / n)) / n);
  MESSAGE("log ppl = " << std::log(rep.row("generator").perplexity) << ", floor = " << floor << ", se = " << se);
  CHECK(std::abs(std::log(rep.row("generator").perplexity) - floor) < 4 * se);
}

TEST_CASE("impossible continuations are clipped and counted") {
  const HmmParams gen = fixtures::canonical();
  DistillDataset d;
  d.seq_len = 3;
  d.records.push_back({{0}, {1, 1}, {}});
  d.records.push_back({{0, 0}, {0}, {}});
  auto never_one = std::make_shared<const HmmParams>(Vocabulary::numeric(2), std::vector<double>{1.0},
                                                     DenseMatrix::identity(1), DenseMatrix(1, 2, {1.0, 0.0}), 8);
  const EvalReport rep = evaluate_perplexity({{"never-one", never_one, std::nullopt}}, d);
  CHECK(rep.row("never-one").clipped == 1);
  CHECK(std::isfinite(rep.row("never-one").perplexity));
  CHECK(rep.row("never-one").perplexity == doctest::Approx(std::exp(30.0 / 2.0)).epsilon(1e-9));
}

TEST_CASE("every model scores identical pairs") {
  const TabularLm lm = TabularLm::planted(2, 0.8, 0.1);
  const DistillDataset d = sample_dataset(lm, 300, 8, 2);
  Rng rng(73);
  auto p = std::make_shared<const HmmParams>(fixtures::random_hmm(3, 2, rng));
  EncoderHead head = EncoderHead::linear(lm.feature_dim(), 3);
  const EvalReport rep = evaluate_perplexity({{"hmm", p, std::nullopt}, {"hybrid", p, head}}, d);
  REQUIRE(rep.rows.size() == 2);
  CHECK(rep.rows[0].records == rep.rows[1].records);
  for (std::size_t b = 0; b < kLengthBuckets.size(); ++b)
    CHECK(rep.rows[0].buckets[b].records == rep.rows[1].buckets[b].records);
  std::ostringstream csv;
  rep.write_csv(csv);
  CHECK(csv.str().find("hybrid") != std::string::npos);
}

TEST_CASE("joint fine-tuning does not lower the hybrid objective") {
  const TabularLm lm = TabularLm::planted(2, 0.8, 0.1);
  const DistillDataset d = sample_dataset(lm, 200, 8, 6);
  EmConfig em;
  em.hidden = 3;
  em.iters = 10;
  const EmResult base = em_train_hmm(d.sequences(), Vocabulary::numeric(2), em);
  FinetuneConfig cfg;
  cfg.rounds = 3;
  cfg.em_iters = 3;
  cfg.encoder = TrainConfig::defaults_for(EncoderVariant::linear);
  cfg.encoder.steps = 200;
  const FinetuneResult r = joint_finetune(base.params, EncoderHead::linear(lm.feature_dim(), 3), d, cfg);
  REQUIRE(r.mean_loglik.size() == 3);
  const auto prepared = prepare_examples(d.hybrid_examples(), base.params);
  const double start = mean_hybrid_loglik(EncoderHead::linear(lm.feature_dim(), 3), prepared);
  CHECK(r.mean_loglik.front() > start);
  CHECK(r.mean_loglik.back() >= r.mean_loglik.front() - 1e-3);
}

}  // TEST_SUITE
