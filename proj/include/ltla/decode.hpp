#pragma once

// Constrained generation: base-LM next-token distributions reweighted by the
// surrogate's probability of the constraint, with one batched HMM step per
// decode step.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ltla/base_lm.hpp"
#include "ltla/dfa.hpp"
#include "ltla/encoder.hpp"
#include "ltla/hmm.hpp"
#include "ltla/lookahead.hpp"

namespace ltla {

/// How the surrogate's latent belief is obtained from the prefix: the HMM's
/// own filter, or a neural head evaluated on the base LM's features.
struct SurrogateEncoder {
  std::shared_ptr<const HmmParams> params;
  std::optional<EncoderHead> head;

  /// Distribution of the latent state that emits the next token.
  std::vector<double> predictive(const Belief& belief, bool at_start, const BaseLm& lm, const LmState& lm_state) const;
};

/// A constraint with its precomputed table. Tables are time-homogeneous, so a
/// decode of max_len tokens reads layer horizon - max_len + t after t tokens.
struct Constraint {
  std::shared_ptr<const Dfa> dfa;                    // DFA constraint
  std::optional<FactorizedClassifier> classifier;    // attribute constraint
  std::shared_ptr<const LookaheadTable> table;

  static Constraint from_dfa(std::shared_ptr<const Dfa> dfa, const HmmParams& params, std::size_t horizon,
                             TableCache& cache);
  static Constraint from_classifier(FactorizedClassifier clf, const HmmParams& params, std::size_t horizon,
                                    TableCache& cache);

  bool is_dfa() const noexcept { return dfa != nullptr; }
  std::size_t horizon() const { return table->horizon(); }
};

struct DecodeState {
  TokenSequence tokens;
  LmState lm;
  Belief belief;  // filtered q(z_t | x_{1:t}); unused at the start
  DfaState dfa_state = 0;
  double classifier_logit = 0.0;
  double lm_loglik = 0.0;
  double guided_loglik = 0.0;
  bool finished = false;  // emitted eos

  static DecodeState initial(const BaseLm& lm, const Constraint& c);
  bool at_start() const noexcept { return tokens.empty(); }
};

enum class DecodeMode { sample, beam };

struct GenConfig {
  DecodeMode mode = DecodeMode::sample;
  std::size_t beams = 16;
  std::size_t max_len = 32;
  double temperature = 1.0;
  /// Mask eos until the DFA is in an accepting state.
  bool mask_eos = true;
  std::optional<Token> eos;

  void validate(const Constraint& c) const;
};

struct StepScores {
  std::vector<double> lm_logprob;   // log p(v | prefix), untempered
  std::vector<double> log_alpha;    // log p(alpha | prefix, v) under the surrogate
  std::vector<double> guided;       // lm_logprob / temperature + log_alpha, eos-masked
  std::vector<double> predictive;   // latent distribution that emitted the scores
};

/// Guided scores for every next token at once: one propagation of the belief,
/// one emission weighting and one table contraction per DFA successor group.
/// Throws UnsatisfiableAtStep when every candidate has zero mass.
StepScores step_scores(const DecodeState& state, const BaseLm& lm, const SurrogateEncoder& enc,
                       const Constraint& c, const GenConfig& cfg);

/// Per-token loop reference: absorbs each v separately and queries the table.
StepScores step_scores_reference(const DecodeState& state, const BaseLm& lm, const SurrogateEncoder& enc,
                                 const Constraint& c, const GenConfig& cfg);

/// Appends v and updates the LM state, belief, DFA state and log-likelihoods.
DecodeState advance(const DecodeState& state, Token v, const StepScores& scores, const BaseLm& lm,
                    const SurrogateEncoder& enc, const Constraint& c, const GenConfig& cfg);

/// p(alpha) before any token under the surrogate.
double constraint_prob_at_start(const SurrogateEncoder& enc, const Constraint& c);

struct Hypothesis {
  TokenSequence tokens;
  double lm_loglik = 0.0;
  double guided_loglik = 0.0;
  bool accepted = false;
};

/// Ancestral sampling from the normalized guided scores. Throws
/// UnsatisfiableAtStep (step 0 when p(alpha) = 0 at the start).
Hypothesis sample_generate(const BaseLm& lm, const SurrogateEncoder& enc, const Constraint& c, const GenConfig& cfg,
                           std::uint64_t seed);

struct BeamResult {
  /// Accepted hypotheses, best first by base-LM log-likelihood.
  std::vector<Hypothesis> hypotheses;
  bool constraint_met = false;
  /// Highest guided-score hypothesis when nothing was accepted.
  std::optional<Hypothesis> best_partial;
};

/// Beam search on lm prefix log-likelihood + log p(alpha | prefix).
BeamResult beam_generate(const BaseLm& lm, const SurrogateEncoder& enc, const Constraint& c, const GenConfig& cfg);

// ---------------------------------------------------------------------------
// Benchmark

struct BenchConfig {
  std::size_t vocab = 8;
  std::size_t hidden = 16;
  std::size_t max_len = 32;
  std::size_t decodes = 100;
  std::size_t warmup = 5;
  std::uint64_t seed = 0;
};

struct SlopeFit {
  double slope = 0.0;      // seconds per step per unit t
  double intercept = 0.0;
  double ci_low = 0.0;     // 95% interval for the slope
  double ci_high = 0.0;
  bool ci_contains_zero() const noexcept { return ci_low <= 0.0 && ci_high >= 0.0; }
};

struct BenchReport {
  std::vector<double> ltla_step_seconds;   // median over decodes, index t = 0..max_len-1
  std::vector<double> naive_step_seconds;
  SlopeFit ltla;
  SlopeFit naive;
  std::size_t ltla_table_builds = 0;       // builds for the benchmark constraint
  std::size_t naive_table_builds = 0;
  std::size_t decodes = 0;
  double encoder_seconds_per_call = 0.0;   // measured cost of one neural encoder call

  void write_table(std::ostream& out) const;
};

/// Ordinary least squares of y on x with a t-based 95% slope interval.
SlopeFit fit_slope(const std::vector<double>& x, const std::vector<double>& y);

/// Per-step surrogate cost as a function of t for the precomputed-table mode
/// and for a naive mode that refilters the whole prefix for every candidate
/// and rebuilds the table at every step.
BenchReport bench_decode(const BenchConfig& cfg);

}  // namespace ltla
