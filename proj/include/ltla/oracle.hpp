#pragma once

// Brute-force reference implementations. Everything here enumerates
// continuations explicitly with plain loops and shares no code with the
// table, batched-step or gradient paths it is used to check.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "ltla/base_lm.hpp"
#include "ltla/dfa.hpp"
#include "ltla/encoder.hpp"
#include "ltla/hmm.hpp"
#include "ltla/lookahead.hpp"

namespace ltla::oracle {

inline constexpr std::size_t kEnumerationLimit = 1'000'000;

/// A sequence model as a conditional probability p(continuation | context).
struct SequenceModel {
  std::size_t vocab = 0;
  std::function<double(std::span<const Token> context, std::span<const Token> continuation)> prob;
};

/// HMM by an independent loop-based forward pass: p(ctx ++ cont) / p(ctx).
SequenceModel hmm_model(const HmmParams& params);
/// Chain rule over the LM's next-token distributions.
SequenceModel lm_model(const BaseLm& lm);
/// Hybrid: sum_z q_enc(z | features(ctx)) q(cont | z_t = z); features come
/// from `features_of`. Empty contexts use the HMM initial distribution.
SequenceModel hybrid_model(const HmmParams& params, const EncoderHead& head, const BaseLm& features_of);

using Predicate = std::function<bool(std::span<const Token> context, std::span<const Token> continuation)>;

/// Literal predicates, written without automata.
Predicate contains_all(std::vector<TokenSequence> keywords);
/// The k-th continuation token (1-based) equals v.
Predicate token_at(std::size_t k, Token v);
/// eos among the first k continuation tokens.
Predicate eos_within(std::size_t k, Token eos);
/// Runs the DFA over context ++ continuation with Dfa::step.
Predicate dfa_accepts(const Dfa& dfa);

/// V^horizon with an explicit guard.
std::size_t checked_count(std::size_t vocab, std::size_t horizon);

/// sum over all continuations of p(cont | ctx) * 1{pred}.
double enumerate_event_prob(const SequenceModel& model, std::span<const Token> context, const Predicate& pred,
                            std::size_t horizon);

/// sigmoid(bias + sum w[ctx] + log E[exp(sum w[cont])]) by enumeration.
double enumerate_classifier_prob(const SequenceModel& model, std::span<const Token> context,
                                 const FactorizedClassifier& clf, std::size_t horizon);

/// Full conditional table over V^horizon; the first continuation token is the
/// most significant digit of the index.
std::vector<double> enumerate_continuation_dist(const SequenceModel& model, std::span<const Token> context,
                                                std::size_t horizon);

/// KL(p || q) in nats; +infinity when q lacks support of p.
double kl_divergence(std::span<const double> p, std::span<const double> q);

/// Exact I(X_{<t}; X_{>=t}) for sequences of length n under the HMM.
double enumerate_mutual_information(const HmmParams& params, std::size_t t, std::size_t n);

/// Same for the hybrid chain: x_{<t} from `prefix_lm`, then z ~ q_enc(. |
/// features(x_{<t})) at position t-1 and x_{>=t} from the HMM.
double enumerate_mutual_information_hybrid(const HmmParams& params, const EncoderHead& head, const BaseLm& prefix_lm,
                                           std::size_t t, std::size_t n);

/// Decodes a continuation index (first token most significant).
TokenSequence decode_index(std::size_t index, std::size_t vocab, std::size_t horizon);

}  // namespace ltla::oracle
