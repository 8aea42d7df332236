#include "ltla/decode.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>

#include "ltla/errors.hpp"
#include "ltla/parallel.hpp"
#include "ltla/rng.hpp"
#include "ltla/simd.hpp"

namespace ltla {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sigmoid(double x) { return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

std::vector<double> log_softmax(std::span<const double> xs) {
  double m = kNegInf;
  for (double x : xs) m = std::max(m, x);
  std::vector<double> out(xs.size(), kNegInf);
  if (m == kNegInf) return out;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  const double lse = m + std::log(s);
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i] - lse;
  return out;
}

// Layer of the table read after t generated tokens.
std::size_t layer(const Constraint& c, const GenConfig& cfg, std::size_t t) {
  return c.horizon() - cfg.max_len + t;
}

// log p(alpha | prefix, v) for all v from the next-latent distribution.
std::vector<double> lookahead_scores(std::span<const double> pred, const DecodeState& state, const HmmParams& params,
                                     const Constraint& c, std::size_t t) {
  const std::vector<double> mass = params.emission().left_mul(pred);
  std::vector<double> out(mass.size(), kNegInf);
  if (c.is_dfa()) {
    const std::vector<double> joint = lookahead_joint(pred, state.dfa_state, *c.dfa, params, *c.table, t);
    for (std::size_t v = 0; v < out.size(); ++v)
      if (mass[v] > 0.0 && joint[v] > 0.0) out[v] = std::log(joint[v] / mass[v]);
  } else {
    const auto& clf = *c.classifier;
    const std::vector<double> lj = classifier_log_joint(pred, clf, params, *c.table, t);
    for (std::size_t v = 0; v < out.size(); ++v)
      if (mass[v] > 0.0) out[v] = log_sigmoid(clf.bias + state.classifier_logit + lj[v] - std::log(mass[v]));
  }
  return out;
}

StepScores finish_scores(StepScores s, const DecodeState& state, const Constraint& c, const GenConfig& cfg) {
  s.guided.resize(s.lm_logprob.size());
  bool any = false;
  for (std::size_t v = 0; v < s.guided.size(); ++v) {
    s.guided[v] = s.lm_logprob[v] / cfg.temperature + s.log_alpha[v];
    if (std::isnan(s.guided[v])) s.guided[v] = kNegInf;
  }
  if (cfg.mask_eos && cfg.eos && c.is_dfa() && !c.dfa->accepting(state.dfa_state)) s.guided[*cfg.eos] = kNegInf;
  for (double g : s.guided) any = any || g > kNegInf;
  if (!any) throw UnsatisfiableAtStep(state.tokens.size());
  return s;
}

StepScores lm_part(const DecodeState& state, const BaseLm& lm) {
  StepScores s;
  const auto dist = lm.next_dist(state.lm);
  s.lm_logprob.resize(dist.size());
  for (std::size_t v = 0; v < dist.size(); ++v) s.lm_logprob[v] = dist[v] > 0.0 ? std::log(dist[v]) : kNegInf;
  return s;
}

bool is_accepted(const DecodeState& s, const Constraint& c) {
  if (c.is_dfa()) return c.dfa->accepting(s.dfa_state);
  return sigmoid(c.classifier->bias + s.classifier_logit) >= 0.5;
}

Hypothesis to_hypothesis(const DecodeState& s, const Constraint& c) {
  return Hypothesis{s.tokens, s.lm_loglik, s.guided_loglik, is_accepted(s, c)};
}

}  // namespace

std::vector<double> SurrogateEncoder::predictive(const Belief& belief, bool at_start, const BaseLm& lm,
                                                 const LmState& lm_state) const {
  if (at_start) return {params->initial().begin(), params->initial().end()};
  if (head) return params->propagate(encode_prior(*head, lm.featurize(lm_state)).probs);
  return params->propagate(belief.probs);
}

Constraint Constraint::from_dfa(std::shared_ptr<const Dfa> dfa, const HmmParams& params, std::size_t horizon,
                                TableCache& cache) {
  if (dfa->alphabet_size() != params.vocab_size()) throw DomainError("constraint: DFA alphabet != vocabulary size");
  Constraint c;
  c.table = cache.dfa_table(params, *dfa, horizon);
  c.dfa = std::move(dfa);
  return c;
}

Constraint Constraint::from_classifier(FactorizedClassifier clf, const HmmParams& params, std::size_t horizon,
                                       TableCache& cache) {
  clf.validate(params.vocab_size());
  Constraint c;
  c.table = cache.classifier_table(params, clf, horizon);
  c.classifier = std::move(clf);
  return c;
}

DecodeState DecodeState::initial(const BaseLm& lm, const Constraint& c) {
  DecodeState s;
  s.lm = lm.initial_state();
  s.dfa_state = c.is_dfa() ? c.dfa->start() : 0;
  return s;
}

void GenConfig::validate(const Constraint& c) const {
  if (beams == 0) throw DomainError("generate: beams must be >= 1");
  if (max_len == 0) throw DomainError("generate: max_len must be >= 1");
  if (max_len > c.horizon())
    throw DomainError("generate: max_len " + std::to_string(max_len) + " exceeds the table horizon " +
                      std::to_string(c.horizon()));
  if (!(temperature > 0.0)) throw DomainError("generate: temperature must be positive");
}

StepScores step_scores(const DecodeState& state, const BaseLm& lm, const SurrogateEncoder& enc, const Constraint& c,
                       const GenConfig& cfg) {
  const std::size_t t = state.tokens.size();
  if (t >= cfg.max_len) throw DomainError("step_scores: decode is already at max_len");
  StepScores s = lm_part(state, lm);
  s.predictive = enc.predictive(state.belief, state.at_start(), lm, state.lm);
  s.log_alpha = lookahead_scores(s.predictive, state, *enc.params, c, layer(c, cfg, t));
  return finish_scores(std::move(s), state, c, cfg);
}

StepScores step_scores_reference(const DecodeState& state, const BaseLm& lm, const SurrogateEncoder& enc,
                                 const Constraint& c, const GenConfig& cfg) {
  const std::size_t t = state.tokens.size();
  const std::size_t next = layer(c, cfg, t) + 1;
  const HmmParams& params = *enc.params;
  StepScores s = lm_part(state, lm);
  s.predictive = enc.predictive(state.belief, state.at_start(), lm, state.lm);
  s.log_alpha.assign(params.vocab_size(), kNegInf);
  for (std::size_t v = 0; v < params.vocab_size(); ++v) {
    const auto b = try_absorb(s.predictive, 0.0, static_cast<Token>(v), params);
    if (!b) continue;
    if (c.is_dfa()) {
      const double p = query_event_prob(*b, c.dfa->step(state.dfa_state, static_cast<Token>(v)), *c.table, next);
      if (p > 0.0) s.log_alpha[v] = std::log(p);
    } else {
      const auto& clf = *c.classifier;
      s.log_alpha[v] = std::log(query_classifier(*b, state.classifier_logit + clf.weights[v], clf, *c.table, next));
    }
  }
  return finish_scores(std::move(s), state, c, cfg);
}

DecodeState advance(const DecodeState& state, Token v, const StepScores& scores, const BaseLm& lm,
                    const SurrogateEncoder& enc, const Constraint& c, const GenConfig& cfg) {
  if (v >= scores.guided.size()) throw DomainError("advance: token out of range");
  DecodeState next = state;
  next.tokens.push_back(v);
  next.lm = lm.advance(state.lm, v);
  next.lm_loglik += scores.lm_logprob[v];
  next.guided_loglik += log_softmax(scores.guided)[v];
  if (auto b = try_absorb(scores.predictive, state.belief.log_norm, v, *enc.params)) next.belief = std::move(*b);
  if (c.is_dfa()) next.dfa_state = c.dfa->step(state.dfa_state, v);
  else next.classifier_logit += c.classifier->weights[v];
  next.finished = cfg.eos && v == *cfg.eos;
  return next;
}

double constraint_prob_at_start(const SurrogateEncoder& enc, const Constraint& c) {
  const HmmParams& params = *enc.params;
  if (c.is_dfa())
    return query_event_prob_predictive(params.initial(), c.dfa->start(), *c.dfa, params, *c.table, 0);
  const auto lj = classifier_log_joint(params.initial(), *c.classifier, params, *c.table, 0);
  double m = kNegInf;
  for (double x : lj) m = std::max(m, x);
  double s = 0.0;
  for (double x : lj) s += std::exp(x - m);
  return sigmoid(c.classifier->bias + m + std::log(s));
}

Hypothesis sample_generate(const BaseLm& lm, const SurrogateEncoder& enc, const Constraint& c, const GenConfig& cfg,
                           std::uint64_t seed) {
  cfg.validate(c);
  // The start-of-decode check uses the layer matching max_len.
  {
    const DecodeState s0 = DecodeState::initial(lm, c);
    const auto pred = enc.predictive(s0.belief, true, lm, s0.lm);
    const auto la = lookahead_scores(pred, s0, *enc.params, c, layer(c, cfg, 0));
    const auto mass = enc.params->emission().left_mul(pred);
    double p = 0.0;
    for (std::size_t v = 0; v < la.size(); ++v) p += mass[v] * std::exp(la[v]);
    if (!(p > 0.0)) throw UnsatisfiableAtStep(0);
  }
  Rng rng(seed);
  DecodeState state = DecodeState::initial(lm, c);
  while (state.tokens.size() < cfg.max_len && !state.finished) {
    const StepScores s = step_scores(state, lm, enc, c, cfg);
    const std::vector<double> lp = log_softmax(s.guided);
    std::vector<double> w(lp.size());
    for (std::size_t v = 0; v < w.size(); ++v) w[v] = std::exp(lp[v]);
    const auto v = static_cast<Token>(rng.categorical(w));
    state = advance(state, v, s, lm, enc, c, cfg);
  }
  return to_hypothesis(state, c);
}

BeamResult beam_generate(const BaseLm& lm, const SurrogateEncoder& enc, const Constraint& c, const GenConfig& cfg) {
  cfg.validate(c);
  struct Beam {
    DecodeState state;
    double score;
  };
  struct Candidate {
    double score;
    std::size_t beam;
    Token token;
  };
  std::vector<Beam> live{{DecodeState::initial(lm, c), 0.0}};
  std::vector<Beam> done;
  for (std::size_t t = 0; t < cfg.max_len && !live.empty(); ++t) {
    std::vector<std::optional<StepScores>> scores(live.size());
    parallel_for(live.size(), [&](std::size_t b, std::size_t e, std::size_t) {
      for (std::size_t i = b; i < e; ++i) {
        try {
          scores[i] = step_scores(live[i].state, lm, enc, c, cfg);
        } catch (const UnsatisfiableAtStep&) {
          scores[i].reset();
        }
      }
    });
    std::vector<Candidate> cand;
    for (std::size_t i = 0; i < live.size(); ++i) {
      if (!scores[i]) continue;
      const StepScores& s = *scores[i];
      for (std::size_t v = 0; v < s.guided.size(); ++v) {
        if (!(s.guided[v] > kNegInf)) continue;
        cand.push_back({live[i].state.lm_loglik + s.lm_logprob[v] + s.log_alpha[v], i, static_cast<Token>(v)});
      }
    }
    if (cand.empty()) {
      for (auto& b : live) done.push_back(std::move(b));
      live.clear();
      break;
    }
    const std::size_t keep = std::min(cfg.beams, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.beam != b.beam) return a.beam < b.beam;
                        return a.token < b.token;
                      });
    std::vector<Beam> next;
    next.reserve(keep);
    for (std::size_t k = 0; k < keep; ++k) {
      const Candidate& cd = cand[k];
      Beam nb{advance(live[cd.beam].state, cd.token, *scores[cd.beam], lm, enc, c, cfg), cd.score};
      if (nb.state.finished) done.push_back(std::move(nb));
      else next.push_back(std::move(nb));
    }
    live = std::move(next);
  }
  for (auto& b : live) done.push_back(std::move(b));

  BeamResult res;
  for (const auto& b : done) {
    Hypothesis h = to_hypothesis(b.state, c);
    if (h.accepted) res.hypotheses.push_back(std::move(h));
  }
  std::sort(res.hypotheses.begin(), res.hypotheses.end(), [](const Hypothesis& a, const Hypothesis& b) {
    if (a.lm_loglik != b.lm_loglik) return a.lm_loglik > b.lm_loglik;
    if (a.tokens.size() != b.tokens.size()) return a.tokens.size() < b.tokens.size();
    return a.tokens < b.tokens;
  });
  res.constraint_met = !res.hypotheses.empty();
  if (!res.constraint_met && !done.empty()) {
    const auto best = std::max_element(done.begin(), done.end(), [](const Beam& a, const Beam& b) {
      if (a.score != b.score) return a.score < b.score;
      return a.state.tokens > b.state.tokens;
    });
    res.best_partial = to_hypothesis(best->state, c);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Benchmark

namespace {

// Two-sided 97.5% Student-t quantile (Cornish-Fisher expansion in 1/df).
double t_quantile_975(double df) {
  const double z = 1.959963984540054;
  const double z3 = z * z * z;
  const double z5 = z3 * z * z;
  const double z7 = z5 * z * z;
  return z + (z3 + z) / (4 * df) + (5 * z5 + 16 * z3 + 3 * z) / (96 * df * df) +
         (3 * z7 + 19 * z5 + 17 * z3 - 15 * z) / (384 * df * df * df);
}

HmmParams bench_params(std::size_t h, std::size_t v, Rng& rng) {
  auto simplex = [&rng](std::size_t n) {
    std::vector<double> p(n);
    double s = 0.0;
    for (double& x : p) s += (x = 0.05 + rng.uniform());
    for (double& x : p) x /= s;
    return p;
  };
  std::vector<double> a;
  std::vector<double> e;
  for (std::size_t z = 0; z < h; ++z) {
    const auto ra = simplex(h);
    const auto re = simplex(v);
    a.insert(a.end(), ra.begin(), ra.end());
    e.insert(e.end(), re.begin(), re.end());
  }
  return HmmParams(Vocabulary::numeric(v), simplex(h), DenseMatrix(h, h, std::move(a)), DenseMatrix(h, v, std::move(e)),
                   1024);
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

SlopeFit fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 3 || y.size() != n) throw DomainError("fit_slope: need >= 3 paired points");
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  SlopeFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ssr = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - f.intercept - f.slope * x[i];
    ssr += r * r;
  }
  const double se = std::sqrt(ssr / static_cast<double>(n - 2) / sxx);
  const double q = t_quantile_975(static_cast<double>(n - 2));
  f.ci_low = f.slope - q * se;
  f.ci_high = f.slope + q * se;
  return f;
}

void BenchReport::write_table(std::ostream& out) const {
  out << "t,ltla_us,naive_us\n";
  for (std::size_t t = 0; t < ltla_step_seconds.size(); ++t)
    out << t << ',' << ltla_step_seconds[t] * 1e6 << ',' << naive_step_seconds[t] * 1e6 << '\n';
  auto line = [&out](const char* name, const SlopeFit& f) {
    out << "# " << name << " slope " << f.slope * 1e9 << " ns/step per t, 95% CI [" << f.ci_low * 1e9 << ", "
        << f.ci_high * 1e9 << "]\n";
  };
  line("ltla", ltla);
  line("naive", naive);
  out << "# table builds: ltla " << ltla_table_builds << ", naive " << naive_table_builds << " over " << decodes
      << " decodes\n";
  out << "# neural encoder call: " << encoder_seconds_per_call * 1e6 << " us\n";
}

namespace {

double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

}  // namespace

BenchReport bench_decode(const BenchConfig& cfg) {
  if (cfg.decodes == 0 || cfg.max_len < 3) throw DomainError("bench: need decodes >= 1 and max_len >= 3");
  Rng rng(derive_seed(cfg.seed, "bench"));
  auto params = std::make_shared<const HmmParams>(bench_params(cfg.hidden, cfg.vocab, rng));
  const HmmLm lm(params);
  // "Ends with the last token": every state has the same two successor
  // groups, so per-step work cannot drift with the DFA state and only t varies.
  const Token last = static_cast<Token>(cfg.vocab - 1);
  std::vector<DfaState> delta(2 * cfg.vocab, 0);
  delta[last] = delta[cfg.vocab + last] = 1;
  const Dfa dfa(cfg.vocab, std::move(delta), 0, {false, true});
  auto dfa_ptr = std::make_shared<const Dfa>(dfa);
  TableCache cache;
  const Constraint c = Constraint::from_dfa(dfa_ptr, *params, cfg.max_len, cache);
  const SurrogateEncoder enc{params, std::nullopt};
  GenConfig gen;
  gen.max_len = cfg.max_len;

  // Token streams to replay in both modes.
  std::vector<TokenSequence> streams;
  for (std::size_t d = 0; d < cfg.decodes + cfg.warmup; ++d) {
    const Constraint again = Constraint::from_dfa(dfa_ptr, *params, cfg.max_len, cache);
    streams.push_back(sample_generate(lm, enc, again, gen, derive_seed(cfg.seed, "decode" + std::to_string(d))).tokens);
  }

  const std::size_t T = cfg.max_len;
  // Per-step samples over recorded decodes; the median resists interrupts.
  std::vector<std::vector<double>> ltla(T);
  std::vector<std::vector<double>> naive(T);
  std::size_t naive_builds = 0;
  volatile double sink = 0.0;
  for (std::size_t d = 0; d < streams.size(); ++d) {
    const bool record = d >= cfg.warmup;
    const TokenSequence& toks = streams[d];
    // Precomputed-table mode: one propagation, one emission weighting and one
    // table contraction per step; belief and DFA state carried forward.
    DecodeState state = DecodeState::initial(lm, c);
    state.tokens.reserve(T);  // keep reallocation out of the timed steps
    for (std::size_t t = 0; t < T; ++t) {
      const auto t0 = Clock::now();
      const auto pred = enc.predictive(state.belief, t == 0, lm, state.lm);
      const auto la = lookahead_scores(pred, state, *params, c, t);
      if (auto b = try_absorb(pred, state.belief.log_norm, toks[t], *params)) state.belief = std::move(*b);
      state.dfa_state = dfa.step(state.dfa_state, toks[t]);
      state.tokens.push_back(toks[t]);
      const double dt = seconds_since(t0);
      sink = sink + la[0];
      if (record) ltla[t].push_back(dt);
    }
  }
  // Naive mode runs as a separate pass so its table rebuilds do not evict the
  // first mode's working set between decodes.
  for (std::size_t d = 0; d < streams.size(); ++d) {
    const bool record = d >= cfg.warmup;
    const TokenSequence& toks = streams[d];
    // The table is rebuilt and every candidate's prefix is refiltered from
    // scratch.
    TokenSequence prefix;
    DfaState s = dfa.start();
    for (std::size_t t = 0; t < T; ++t) {
      const auto t0 = Clock::now();
      const LookaheadTable table = precompute_dfa_table(*params, dfa, T);
      ++naive_builds;
      TokenSequence cand = prefix;
      cand.push_back(0);
      double acc = 0.0;
      for (std::size_t v = 0; v < cfg.vocab; ++v) {
        cand.back() = static_cast<Token>(v);
        const Belief b = filter_prefix(cand, *params);
        acc += query_event_prob(b, dfa.step(s, static_cast<Token>(v)), table, t + 1);
      }
      const double dt = seconds_since(t0);
      sink = sink + acc;
      if (record) naive[t].push_back(dt);
      prefix.push_back(toks[t]);
      s = dfa.step(s, toks[t]);
    }
  }
  (void)sink;

  BenchReport r;
  r.decodes = cfg.decodes;
  std::vector<double> xs(T);
  for (std::size_t t = 0; t < T; ++t) {
    xs[t] = static_cast<double>(t);
    r.ltla_step_seconds.push_back(median(ltla[t]));
    r.naive_step_seconds.push_back(median(naive[t]));
  }
  r.ltla = fit_slope(xs, r.ltla_step_seconds);
  r.naive = fit_slope(xs, r.naive_step_seconds);
  r.ltla_table_builds = cache.builds_for(dfa.hash());
  r.naive_table_builds = naive_builds / streams.size();

  const EncoderHead head = EncoderHead::mlp(cfg.hidden, cfg.hidden, derive_seed(cfg.seed, "bench-head"));
  std::vector<double> feats(cfg.hidden, 1.0 / static_cast<double>(cfg.hidden));
  const std::size_t calls = 2000;
  const auto t0 = Clock::now();
  for (std::size_t i = 0; i < calls; ++i) sink = sink + encode_prior(head, feats).probs[0];
  r.encoder_seconds_per_call = seconds_since(t0) / static_cast<double>(calls);
  return r;
}

}  // namespace ltla
