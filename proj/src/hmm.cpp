#include "ltla/hmm.hpp"

#include <cmath>
#include <limits>
#include <set>

#include "ltla/errors.hpp"
#include "ltla/rng.hpp"
#include "ltla/simd.hpp"

namespace ltla {

Vocabulary Vocabulary::numeric(std::size_t size) {
  Vocabulary v;
  v.names.reserve(size);
  for (std::size_t i = 0; i < size; ++i) v.names.push_back(std::to_string(i));
  return v;
}

Token Vocabulary::lookup(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<Token>(i);
  throw DomainError("unknown token '" + name + "'");
}

void Vocabulary::validate() const {
  if (names.empty()) throw ValidationError("vocabulary is empty");
  std::set<std::string> seen(names.begin(), names.end());
  if (seen.size() != names.size()) throw ValidationError("vocabulary names are not unique");
  if (eos && *eos >= names.size()) throw ValidationError("eos id out of range");
}

HmmParams::HmmParams(Vocabulary vocab, std::vector<double> initial, StochasticOperator transition,
                     StochasticOperator emission, std::size_t max_len)
    : vocab_(std::move(vocab)),
      initial_(std::move(initial)),
      transition_(std::move(transition)),
      emission_(std::move(emission)),
      max_len_(max_len) {
  vocab_.validate();
  const std::size_t h = initial_.size();
  if (h == 0) throw ValidationError("HmmParams: hidden size must be positive");
  if (max_len_ == 0) throw ValidationError("HmmParams: max_len must be positive");
  if (transition_.rows() != h || transition_.cols() != h)
    throw ValidationError("HmmParams: transition must be H x H");
  if (emission_.rows() != h || emission_.cols() != vocab_.size())
    throw ValidationError("HmmParams: emission must be H x V");
  double s = 0.0;
  for (double p : initial_) {
    if (!(p >= 0.0)) throw ValidationError("HmmParams: negative initial probability");
    s += p;
  }
  if (std::abs(s - 1.0) > kProbTol) throw ValidationError("HmmParams: initial distribution does not sum to 1");
  transition_.validate_row_stochastic(kProbTol, "transition");
  emission_.validate_row_stochastic(kProbTol, "emission");
}

void HmmParams::check_token(Token token) const {
  if (token >= vocab_size())
    throw DomainError("token " + std::to_string(token) + " out of range for vocabulary of size " +
                      std::to_string(vocab_size()));
}

std::vector<double> HmmParams::emission_column(Token token) const {
  check_token(token);
  return emission_.column(token);
}

std::optional<Belief> try_absorb(std::span<const double> predictive, double log_norm, Token token,
                                 const HmmParams& params) {
  const std::vector<double> col = params.emission_column(token);
  Belief out;
  out.probs.resize(col.size());
  simd::mul(predictive, col, out.probs);
  const double mass = simd::sum(out.probs);
  if (!(mass > 0.0)) return std::nullopt;
  simd::scale(1.0 / mass, out.probs);
  out.log_norm = log_norm + std::log(mass);
  return out;
}

Belief forward_step(const Belief& belief, Token token, const HmmParams& params) {
  params.check_token(token);
  if (belief.probs.size() != params.hidden_size()) throw DomainError("forward_step: belief has wrong size");
  const std::vector<double> pred = params.propagate(belief.probs);
  auto next = try_absorb(pred, belief.log_norm, token, params);
  if (!next) throw ImpossibleObservation(token);
  return *std::move(next);
}

namespace {

// Shared fold; returns nullopt at the first zero-mass token.
std::optional<Belief> try_filter(std::span<const Token> seq, const HmmParams& params, std::size_t* failed_at) {
  if (seq.empty()) throw DomainError("filter_prefix: empty sequence");
  params.check_token(seq[0]);
  auto belief = try_absorb(params.initial(), 0.0, seq[0], params);
  if (!belief) {
    *failed_at = 0;
    return std::nullopt;
  }
  for (std::size_t i = 1; i < seq.size(); ++i) {
    params.check_token(seq[i]);
    const std::vector<double> pred = params.propagate(belief->probs);
    belief = try_absorb(pred, belief->log_norm, seq[i], params);
    if (!belief) {
      *failed_at = i;
      return std::nullopt;
    }
  }
  return belief;
}

}  // namespace

Belief filter_prefix(std::span<const Token> seq, const HmmParams& params) {
  std::size_t failed_at = 0;
  auto belief = try_filter(seq, params, &failed_at);
  if (!belief) throw ImpossibleObservation(seq[failed_at]);
  return *std::move(belief);
}

double joint_loglik(std::span<const Token> seq, const HmmParams& params) {
  std::size_t failed_at = 0;
  auto belief = try_filter(seq, params, &failed_at);
  if (!belief) return -std::numeric_limits<double>::infinity();
  return belief->log_norm;
}

double continuation_loglik(const Belief& prior, std::span<const Token> continuation, const HmmParams& params) {
  if (prior.probs.size() != params.hidden_size()) throw DomainError("continuation_loglik: prior has wrong size");
  Belief b{prior.probs, 0.0};
  for (Token x : continuation) b = forward_step(b, x, params);
  return b.log_norm;
}

BackwardMessage backward_message(std::span<const Token> continuation, const HmmParams& params) {
  const std::size_t h = params.hidden_size();
  BackwardMessage msg{std::vector<double>(h, 1.0), 0.0};
  std::vector<double> weighted(h);
  for (std::size_t i = continuation.size(); i-- > 0;) {
    const std::vector<double> col = params.emission_column(continuation[i]);
    simd::mul(col, msg.beta, weighted);
    msg.beta = params.transition().right_mul(weighted);
    double mx = 0.0;
    for (double v : msg.beta) mx = std::max(mx, v);
    if (!(mx > 0.0)) {
      msg.log_scale = -std::numeric_limits<double>::infinity();
      return msg;
    }
    simd::scale(1.0 / mx, msg.beta);
    msg.log_scale += std::log(mx);
  }
  return msg;
}

TokenSequence sample_sequence(const HmmParams& params, std::size_t len, std::uint64_t seed) {
  if (len > params.max_len()) throw DomainError("sample_sequence: len exceeds max_len");
  Rng rng(seed);
  const std::size_t h = params.hidden_size();
  TokenSequence out;
  out.reserve(len);
  std::vector<double> onehot(h, 0.0);
  std::size_t z = 0;
  for (std::size_t t = 0; t < len; ++t) {
    if (t == 0) {
      z = rng.categorical(params.initial());
    } else {
      std::fill(onehot.begin(), onehot.end(), 0.0);
      onehot[z] = 1.0;
      z = rng.categorical(params.propagate(onehot));
    }
    std::fill(onehot.begin(), onehot.end(), 0.0);
    onehot[z] = 1.0;
    const std::vector<double> emit = params.emission().left_mul(onehot);
    out.push_back(static_cast<Token>(rng.categorical(emit)));
  }
  return out;
}

}  // namespace ltla
