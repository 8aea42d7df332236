#pragma once

// Exact HMM primitives in scaled-probability space: beliefs are kept
// normalized and the log of each normalizer is accumulated separately.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ltla/stochastic.hpp"

namespace ltla {

using Token = std::uint32_t;
using TokenSequence = std::vector<Token>;

inline constexpr double kProbTol = 1e-9;

struct Vocabulary {
  std::vector<std::string> names;
  std::optional<Token> eos;

  /// Names "0".."V-1", no eos.
  static Vocabulary numeric(std::size_t size);

  std::size_t size() const noexcept { return names.size(); }
  /// Token by name; throws DomainError if absent.
  Token lookup(const std::string& name) const;
  void validate() const;

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;
};

/// Filtered posterior q(z_t | x_{1:t}) plus log q(x_{1:t}).
struct Belief {
  std::vector<double> probs;
  double log_norm = 0.0;
};

class HmmParams {
 public:
  HmmParams() = default;
  /// Validates shapes and stochasticity (tolerance 1e-9); never renormalizes.
  HmmParams(Vocabulary vocab, std::vector<double> initial, StochasticOperator transition,
            StochasticOperator emission, std::size_t max_len);

  std::size_t hidden_size() const noexcept { return initial_.size(); }
  std::size_t vocab_size() const noexcept { return vocab_.size(); }
  std::size_t max_len() const noexcept { return max_len_; }
  const Vocabulary& vocab() const noexcept { return vocab_; }
  std::span<const double> initial() const noexcept { return initial_; }
  const StochasticOperator& transition() const noexcept { return transition_; }
  const StochasticOperator& emission() const noexcept { return emission_; }

  /// belief . A  -- distribution of the next latent state.
  std::vector<double> propagate(std::span<const double> belief) const { return transition_.left_mul(belief); }
  /// E[:, token]
  std::vector<double> emission_column(Token token) const;

  void check_token(Token token) const;

 private:
  Vocabulary vocab_;
  std::vector<double> initial_;
  StochasticOperator transition_;
  StochasticOperator emission_;
  std::size_t max_len_ = 0;
};

/// Conditions a predictive latent distribution (already propagated) on a
/// token. Returns nullopt when the token has zero mass.
std::optional<Belief> try_absorb(std::span<const double> predictive, double log_norm, Token token,
                                 const HmmParams& params);

/// One transition + emission update. Throws ImpossibleObservation on zero mass.
Belief forward_step(const Belief& belief, Token token, const HmmParams& params);

/// Belief after the whole prefix; the first token is absorbed from the initial
/// distribution.
Belief filter_prefix(std::span<const Token> seq, const HmmParams& params);

/// log q(seq); -infinity for impossible sequences.
double joint_loglik(std::span<const Token> seq, const HmmParams& params);

/// log sum_z prior[z] q(continuation | z_t = z).
double continuation_loglik(const Belief& prior, std::span<const Token> continuation, const HmmParams& params);

/// Scaled backward message for a continuation: q(cont | z_t = z) = beta[z] * exp(log_scale).
struct BackwardMessage {
  std::vector<double> beta;
  double log_scale = 0.0;
};
BackwardMessage backward_message(std::span<const Token> continuation, const HmmParams& params);

/// Ancestral sample z_1 -> x_1 -> z_2 -> ...
TokenSequence sample_sequence(const HmmParams& params, std::size_t len, std::uint64_t seed);

}  // namespace ltla
