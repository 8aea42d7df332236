// Acceptance run: one PASS/FAIL line per criterion. With no arguments every
// criterion runs; otherwise only the named ones (e.g. `ltla_acceptance A1 A9`).
// Exit status is 0 iff every selected criterion passed.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "ltla/base_lm.hpp"
#include "ltla/decode.hpp"
#include "ltla/distill.hpp"
#include "ltla/encoder.hpp"
#include "ltla/errors.hpp"
#include "ltla/lookahead.hpp"
#include "ltla/monarch.hpp"
#include "ltla/oracle.hpp"
#include "ltla/parallel.hpp"

using namespace ltla;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string id;
  std::string title;
  double limit_seconds;
  std::function<Outcome()> run;
};

std::string fmt(double x, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << x;
  return s.str();
}

Dfa random_dfa(std::size_t states, std::size_t v, Rng& rng) {
  std::vector<DfaState> delta(states * v);
  for (auto& d : delta) d = static_cast<DfaState>(rng.below(states));
  std::vector<bool> accept(states);
  for (std::size_t s = 0; s < states; ++s) accept[s] = rng.uniform() < 0.5;
  return Dfa(v, std::move(delta), static_cast<DfaState>(rng.below(states)), std::move(accept));
}

TokenSequence random_seq(std::size_t n, std::size_t v, Rng& rng) {
  TokenSequence s(n);
  for (auto& t : s) t = static_cast<Token>(rng.below(v));
  return s;
}

bool same_score(double a, double b) {
  if (std::isinf(a) || std::isinf(b)) return a == b;
  return std::abs(a - b) <= 1e-12;
}

// ---------------------------------------------------------------------------

Outcome a1_oracle_equivalence() {
  Rng rng(derive_seed(1, "A1"));
  std::size_t instances = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 400; ++trial) {
    const std::size_t v = 1 + rng.below(3);
    const HmmParams p = fixtures::random_hmm(1 + rng.below(4), v, rng, trial % 4 == 0 ? 0.3 : 0.0);
    const Dfa d = random_dfa(1 + rng.below(4), v, rng);
    const TokenSequence ctx = random_seq(rng.below(4), v, rng);
    if (!ctx.empty() && std::isinf(joint_loglik(ctx, p))) continue;
    const std::size_t k = 1 + rng.below(5);
    const double want = oracle::enumerate_event_prob(oracle::hmm_model(p), ctx, oracle::dfa_accepts(d), k);
    const LookaheadTable t = precompute_dfa_table(p, d, k);
    const DfaState s = d.run(d.start(), ctx);
    const double got = ctx.empty() ? query_event_prob_predictive(p.initial(), s, d, p, t, 0)
                                   : query_event_prob(filter_prefix(ctx, p), s, t, 0);
    worst = std::max(worst, std::abs(got - want));
    ++instances;
  }
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t v = 1 + rng.below(3);
    const HmmParams p = fixtures::random_hmm(1 + rng.below(4), v, rng);
    FactorizedClassifier clf{std::vector<double>(v), rng.normal()};
    for (double& w : clf.weights) w = rng.normal();
    const TokenSequence ctx = random_seq(rng.below(4), v, rng);
    const std::size_t k = 1 + rng.below(5);
    const double want = oracle::enumerate_classifier_prob(oracle::hmm_model(p), ctx, clf, k);
    const std::optional<Belief> prior = ctx.empty() ? std::nullopt : std::optional<Belief>(filter_prefix(ctx, p));
    worst = std::max(worst, std::abs(answer_query(QuerySpec::attribute(clf), p, prior, ctx, k) - want));
    ++instances;
  }
  return {instances >= 500 && worst < 1e-9,
          std::to_string(instances) + " instances, max |error| " + fmt(worst, 3)};
}

Outcome a2_batched_step() {
  Rng rng(derive_seed(1, "A2"));
  std::size_t compared = 0;
  bool ok = true;
  for (int trial = 0; trial < 150; ++trial) {
    const std::size_t h = 1 + rng.below(4);
    const std::size_t v = 2 + rng.below(3);
    auto p = std::make_shared<const HmmParams>(fixtures::random_hmm(h, v, rng, trial % 3 == 0 ? 0.25 : 0.0, 16));
    auto lm_params = std::make_shared<const HmmParams>(fixtures::random_hmm(3, v, rng, 0.0, 16));
    const HmmLm lm(lm_params);
    std::optional<EncoderHead> head;
    if (trial % 2 == 1) {
      EncoderHead e = EncoderHead::linear(lm.feature_dim(), h);
      auto flat = e.flat();
      for (double& x : flat) x = rng.normal();
      e.set_flat(flat);
      head = e;
    }
    const SurrogateEncoder enc{p, head};
    TableCache cache;
    Constraint c;
    if (trial % 4 == 3) {
      FactorizedClassifier clf{std::vector<double>(v), rng.normal()};
      for (double& w : clf.weights) w = rng.normal();
      c = Constraint::from_classifier(clf, *p, 8, cache);
    } else {
      c = Constraint::from_dfa(std::make_shared<const Dfa>(random_dfa(1 + rng.below(4), v, rng)), *p, 8, cache);
    }
    GenConfig cfg;
    cfg.max_len = 4 + rng.below(5);
    cfg.temperature = 0.5 + rng.uniform();
    DecodeState s = DecodeState::initial(lm, c);
    try {
      while (s.tokens.size() < cfg.max_len) {
        const StepScores a = step_scores(s, lm, enc, c, cfg);
        const StepScores b = step_scores_reference(s, lm, enc, c, cfg);
        for (std::size_t x = 0; x < v; ++x)
          ok = ok && same_score(a.log_alpha[x], b.log_alpha[x]) && same_score(a.guided[x], b.guided[x]);
        ++compared;
        std::vector<double> w(v);
        for (std::size_t x = 0; x < v; ++x) w[x] = std::isinf(a.guided[x]) ? 0.0 : std::exp(a.guided[x]);
        s = advance(s, static_cast<Token>(rng.categorical(w)), a, lm, enc, c, cfg);
      }
    } catch (const UnsatisfiableAtStep&) {
      // A random DFA may have no accepting completion.
    }
  }
  return {ok && compared >= 200,
          std::to_string(compared) + " states compared, " + (ok ? "all within 1e-12" : "mismatch found")};
}

double mean_ll(const EncoderHead& head, const std::vector<HybridExample>& batch, const HmmParams& p) {
  double s = 0.0;
  for (const auto& ex : batch) s += hybrid_loglik(head, ex.features, ex.continuation, p);
  return s / static_cast<double>(batch.size());
}

Outcome a3_gradient() {
  Rng rng(derive_seed(1, "A3"));
  double worst = 0.0;
  std::size_t instances = 0;
  for (EncoderVariant variant : {EncoderVariant::linear, EncoderVariant::mlp}) {
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t h = 2 + rng.below(3);
      const std::size_t v = 2 + rng.below(2);
      const std::size_t f = 1 + rng.below(4);
      const HmmParams p = fixtures::random_hmm(h, v, rng);
      EncoderHead head = variant == EncoderVariant::linear ? EncoderHead::linear(f, h)
                                                           : EncoderHead::mlp(f, h, rng.engine()(), 2 + rng.below(4));
      if (trial % 3 == 0) head.enable_pre_featurizer();
      auto theta = head.flat();
      for (double& x : theta) x = 0.5 * rng.normal();
      head.set_flat(theta);
      std::vector<HybridExample> batch(1 + rng.below(6));
      for (auto& ex : batch) {
        ex.features.resize(f);
        for (double& x : ex.features) x = rng.normal();
        ex.continuation = random_seq(1 + rng.below(4), v, rng);
      }
      const auto grad = encoder_grad(head, batch, p).flat();
      const double eps = 1e-5;
      for (std::size_t i = 0; i < theta.size(); ++i) {
        auto up = theta;
        auto dn = theta;
        up[i] += eps;
        dn[i] -= eps;
        EncoderHead hu = head;
        EncoderHead hd = head;
        hu.set_flat(up);
        hd.set_flat(dn);
        const double fd = (mean_ll(hu, batch, p) - mean_ll(hd, batch, p)) / (2 * eps);
        // Coordinates whose true derivative is ~0 are compared on a 1e-5 scale.
        const double denom = std::max({std::abs(fd), std::abs(grad[i]), 1e-5});
        worst = std::max(worst, std::abs(fd - grad[i]) / denom);
      }
      ++instances;
    }
  }
  return {worst < 1e-4, std::to_string(instances) + " instances (linear + mlp), max relative error " + fmt(worst, 3)};
}

Outcome a4_monarch() {
  Rng rng(derive_seed(1, "A4"));
  auto normals = [&rng](std::size_t n, double sd) {
    std::vector<double> v(n);
    for (double& x : v) x = sd * rng.normal();
    return v;
  };
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t b = 1 + rng.below(4);
    const std::size_t k = 1 + rng.below(4);
    const std::size_t cw = 1 + rng.below(4);
    const MonarchMatrix m = MonarchMatrix::from_params(b * k, b * cw, b, normals(k * b * b, 1.0), normals(b * k * cw, 1.0));
    const DenseMatrix d = m.materialize();
    const auto x = normals(m.cols(), 1.0);
    const auto y = normals(m.rows(), 1.0);
    const auto mx = m.right_mul(x);
    const auto dx = d.right_mul(x);
    const auto my = m.left_mul(y);
    const auto dy = d.left_mul(y);
    for (std::size_t i = 0; i < mx.size(); ++i) worst = std::max(worst, std::abs(mx[i] - dx[i]));
    for (std::size_t i = 0; i < my.size(); ++i) worst = std::max(worst, std::abs(my[i] - dy[i]));
  }
  auto seconds_per_call = [&](std::size_t h) {
    const auto b = static_cast<std::size_t>(std::lround(std::sqrt(double(h))));
    const MonarchMatrix m = MonarchMatrix::from_params(h, h, b, normals(h * b, 0.1), normals(h * b, 0.1));
    std::vector<double> x(h, 1.0 / double(h));
    const int reps = static_cast<int>(std::max<std::size_t>(20, (std::size_t{1} << 24) / (h * b)));
    std::vector<double> samples;
    for (int trial = 0; trial < 5; ++trial) {
      const auto t0 = std::chrono::steady_clock::now();
      for (int r = 0; r < reps; ++r) x = m.left_mul(x);
      samples.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / reps);
    }
    std::sort(samples.begin(), samples.end());
    return samples[samples.size() / 2];
  };
  seconds_per_call(256);
  const double ratio = seconds_per_call(4096) / seconds_per_call(1024);
  return {worst < 1e-12 && ratio < 12.0,
          "1000 cases max |error| " + fmt(worst, 3) + ", t(4096)/t(1024) = " + fmt(ratio, 3) + " (dense would be 16)"};
}

Outcome a5_constraint_satisfaction() {
  // A positive remainder keeps every keyword reachable under the base LM.
  const TabularLm lm = TabularLm::planted(4, 0.4, 0.4);
  const DistillDataset data = sample_dataset(lm, 3000, 16, derive_seed(1, "A5-data"));
  EmConfig em;
  em.hidden = 4;
  em.iters = 15;
  em.init_seed = derive_seed(1, "A5-init");
  auto params = std::make_shared<const HmmParams>(em_train_hmm(data.sequences(), Vocabulary::numeric(4), em).params);
  TrainConfig tc = TrainConfig::defaults_for(EncoderVariant::linear);
  tc.steps = 300;
  const EncoderHead head =
      train_encoder(EncoderHead::linear(lm.feature_dim(), 4), data.hybrid_examples(), *params, tc).head;

  const std::vector<KeywordSpec> specs{{{{1, 2}}}, {{{3}, {0, 0}}}, {{{2, 1, 3}}}, {{{1}, {2}, {3}}}, {{{3, 3}, {1, 0}}}};
  std::size_t sampled = 0;
  std::size_t sampled_ok = 0;
  std::size_t beamed = 0;
  std::size_t beamed_ok = 0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    auto dfa = std::make_shared<const Dfa>(build_keyword_dfa(specs[i], params->vocab()));
    TableCache cache;
    GenConfig cfg;
    cfg.max_len = 12;
    const Constraint c = Constraint::from_dfa(dfa, *params, cfg.max_len, cache);
    // Alternate the HMM filter and the neural encoder as the surrogate's encoder.
    const SurrogateEncoder enc{params, i % 2 == 0 ? std::nullopt : std::optional<EncoderHead>(head)};
    for (std::size_t s = 0; s < 200; ++s) {
      const Hypothesis h = sample_generate(lm, enc, c, cfg, derive_seed(i * 1000 + s, "A5"));
      ++sampled;
      sampled_ok += dfa->accepts(h.tokens) && h.accepted;
    }
    cfg.mode = DecodeMode::beam;
    cfg.beams = 8;
    const BeamResult r = beam_generate(lm, enc, c, cfg);
    if (!r.constraint_met) continue;
    for (const auto& h : r.hypotheses) {
      ++beamed;
      beamed_ok += dfa->accepts(h.tokens);
    }
  }
  return {sampled == 1000 && sampled_ok == sampled && beamed > 0 && beamed_ok == beamed,
          std::to_string(sampled_ok) + "/" + std::to_string(sampled) + " samples and " + std::to_string(beamed_ok) +
              "/" + std::to_string(beamed) + " beam outputs accepted"};
}

// The A6 and A7 experiment, shared so it runs once.
struct HybridRun {
  bool done = false;
  std::vector<double> gain;      // 1 - ppl(hybrid) / ppl(hmm), per seed
  std::vector<double> gain_b12;  // same in the 1-2 bucket
  std::vector<double> gain_b916; // same in the 9-16 bucket
  std::string table;
};

/// Record-weighted per-token perplexity of the true LM on the test records.
double gold_perplexity(const BaseLm& lm, const DistillDataset& d) {
  const auto model = oracle::lm_model(lm);
  double s = 0.0;
  for (const auto& r : d.records)
    s += std::log(model.prob(r.context, r.continuation)) / static_cast<double>(r.continuation.size());
  return std::exp(-s / static_cast<double>(d.records.size()));
}

const HybridRun& hybrid_run() {
  static HybridRun run;
  if (run.done) return run;
  // Suffix rows put mass 0.45 on the first token and 0.55 on the successor of
  // the previous token: the process state is (first token, previous token),
  // which a 4-state surrogate cannot hold.
  const TabularLm lm = TabularLm::planted(4, 0.45, 0.55);
  std::ostringstream table;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const DistillDataset train = sample_dataset(lm, 50000, 16, derive_seed(seed, "A6-train"));
    const DistillDataset test = sample_dataset(lm, 5000, 16, derive_seed(seed, "A6-test"));
    EmConfig em;
    em.hidden = 4;
    em.iters = 60;
    em.init_seed = derive_seed(seed, "A6-init");
    const HmmParams hmm = em_train_hmm(train.sequences(), Vocabulary::numeric(4), em).params;
    TrainConfig tc = TrainConfig::defaults_for(EncoderVariant::linear);
    tc.seed = derive_seed(seed, "A6-encoder");
    const TrainResult staged = train_encoder(EncoderHead::linear(lm.feature_dim(), 4), train.hybrid_examples(), hmm, tc);
    FinetuneConfig ft;
    ft.rounds = 6;
    ft.encoder = tc;
    const FinetuneResult joint = joint_finetune(hmm, staged.head, train, ft);
    auto base = std::make_shared<const HmmParams>(hmm);
    const EvalReport rep = evaluate_perplexity({{"hmm", base, std::nullopt},
                                                {"hybrid-staged", base, staged.head},
                                                {"hybrid", std::make_shared<const HmmParams>(joint.params), joint.head}},
                                               test);
    table << "seed " << seed << " (gold " << fmt(gold_perplexity(lm, test)) << ")\n";
    rep.write_table(table);
    const EvalRow& h = rep.row("hmm");
    const EvalRow& y = rep.row("hybrid");
    run.gain.push_back(1.0 - y.perplexity / h.perplexity);
    run.gain_b12.push_back(1.0 - y.buckets[0].perplexity / h.buckets[0].perplexity);
    run.gain_b916.push_back(1.0 - y.buckets[3].perplexity / h.buckets[3].perplexity);
  }
  run.table = table.str();
  run.done = true;
  return run;
}

std::string percents(const std::vector<double>& xs) {
  std::string s;
  for (double x : xs) s += (s.empty() ? "" : ", ") + fmt(100.0 * x, 3) + "%";
  return s;
}

Outcome a6_hybrid_beats_hmm() {
  const HybridRun& r = hybrid_run();
  std::cerr << r.table;
  const bool pass = std::all_of(r.gain.begin(), r.gain.end(), [](double g) { return g >= 0.05; });
  return {pass, "held-out perplexity reduction per seed: " + percents(r.gain) + " (need >= 5%)"};
}

Outcome a7_stratified() {
  const HybridRun& r = hybrid_run();
  bool pass = true;
  for (std::size_t i = 0; i < r.gain.size(); ++i) pass = pass && r.gain_b12[i] > r.gain_b916[i];
  return {pass, "bucket 1-2 gain " + percents(r.gain_b12) + " vs bucket 9-16 gain " + percents(r.gain_b916)};
}

Outcome a8_mutual_information() {
  Rng rng(derive_seed(1, "A8"));
  double worst_margin = -1e9;  // max of mi - log H
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t h = 1 + rng.below(4);
    const std::size_t v = 2 + rng.below(2);
    const HmmParams p = fixtures::random_hmm(h, v, rng);
    const std::size_t n = 4;
    const std::size_t t = 2 + rng.below(3);
    worst_margin = std::max(worst_margin, oracle::enumerate_mutual_information(p, t, n) - std::log(double(h)));
    const TabularLm lm = TabularLm::planted(v, 0.5, 0.3);
    EncoderHead head = EncoderHead::linear(lm.feature_dim(), h);
    auto flat = head.flat();
    for (double& x : flat) x = 3.0 * rng.normal();
    head.set_flat(flat);
    worst_margin =
        std::max(worst_margin, oracle::enumerate_mutual_information_hybrid(p, head, lm, t, n) - std::log(double(h)));
  }
  return {worst_margin <= 1e-9, "50 HMMs x {standard, hybrid}: max I - log H = " + fmt(worst_margin, 3)};
}

Outcome a9_precompute_reuse() {
  BenchConfig cfg;
  cfg.max_len = 32;
  cfg.decodes = 100;
  cfg.seed = derive_seed(1, "A9");
  const BenchReport r = bench_decode(cfg);
  const bool pass = r.ltla.ci_contains_zero() && !r.naive.ci_contains_zero() && r.naive.slope > 0 &&
                    r.ltla_table_builds == 1;
  return {pass, "slope ns/step per t: precomputed " + fmt(r.ltla.slope * 1e9, 3) + " [" + fmt(r.ltla.ci_low * 1e9, 3) +
                    ", " + fmt(r.ltla.ci_high * 1e9, 3) + "], rebuild " + fmt(r.naive.slope * 1e9, 4) + " [" +
                    fmt(r.naive.ci_low * 1e9, 4) + ", " + fmt(r.naive.ci_high * 1e9, 4) +
                    "]; table builds " + std::to_string(r.ltla_table_builds) + " over " +
                    std::to_string(r.decodes) + " decodes"};
}

Outcome a10_exact_posterior() {
  Rng rng(derive_seed(1, "A10"));
  const std::size_t v = 2;
  const std::size_t T = 4;
  auto p = std::make_shared<const HmmParams>(fixtures::random_hmm(3, v, rng, 0.0, 8));
  const HmmLm lm(p);
  TableCache cache;
  auto dfa = std::make_shared<const Dfa>(build_keyword_dfa({{{1, 0}, {1, 1}}}, p->vocab()));
  const Constraint c = Constraint::from_dfa(dfa, *p, T, cache);
  const SurrogateEncoder enc{p, std::nullopt};
  GenConfig cfg;
  cfg.max_len = T;
  const auto model = oracle::hmm_model(*p);
  const std::size_t outcomes = oracle::checked_count(v, T);
  std::vector<double> exact(outcomes, 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < outcomes; ++i) {
    const TokenSequence s = oracle::decode_index(i, v, T);
    if (oracle::contains_all({{1, 0}, {1, 1}})({}, s)) exact[i] = model.prob({}, s);
    z += exact[i];
  }
  std::vector<double> emp(outcomes, 0.0);
  const std::size_t n = 50000;
  for (std::uint64_t seed = 0; seed < n; ++seed) {
    const Hypothesis h = sample_generate(lm, enc, c, cfg, derive_seed(seed, "A10"));
    std::size_t idx = 0;
    for (Token t : h.tokens) idx = idx * v + t;
    emp[idx] += 1.0;
  }
  double tv = 0.0;
  for (std::size_t i = 0; i < outcomes; ++i) tv += std::abs(exact[i] / z - emp[i] / double(n));
  tv /= 2;
  return {tv < 0.02, "TV(guided samples, enumerated posterior) = " + fmt(tv, 3) + " over 50000 samples"};
}

}  // namespace

int main(int argc, char** argv) {
  set_max_threads(1);
  const std::vector<Criterion> all{
      {"A1", "oracle equivalence", 60, a1_oracle_equivalence},
      {"A2", "batched-step equivalence", 30, a2_batched_step},
      {"A3", "gradient correctness", 60, a3_gradient},
      {"A4", "Monarch fidelity", 120, a4_monarch},
      {"A5", "constraint satisfaction", 120, a5_constraint_satisfaction},
      {"A6", "hybrid beats standard HMM", 600, a6_hybrid_beats_hmm},
      {"A7", "stratified advantage", 600, a7_stratified},
      {"A8", "mutual information bound", 60, a8_mutual_information},
      {"A9", "precompute reuse", 180, a9_precompute_reuse},
      {"A10", "exact posterior sampling", 120, a10_exact_posterior},
  };
  std::set<std::string> wanted(argv + 1, argv + argc);
  for (const auto& w : wanted) {
    if (std::none_of(all.begin(), all.end(), [&](const Criterion& c) { return c.id == w; })) {
      std::cerr << "unknown criterion '" << w << "'\n";
      return 2;
    }
  }
  bool all_pass = true;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.limit_seconds) {
      o.pass = false;
      o.detail += "; over the " + fmt(c.limit_seconds) + " s limit";
    }
    all_pass = all_pass && o.pass;
    std::printf("%-4s %s  %s: %s (%.1f s)\n", c.id.c_str(), o.pass ? "PASS" : "FAIL", c.title.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return all_pass ? 0 : 1;
}
