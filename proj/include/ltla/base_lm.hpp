#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "ltla/hmm.hpp"

namespace ltla {

/// Context state of a base LM. `tokens` is the prefix; `cache` is free for
/// the implementation (e.g. a filtered belief) and must be a pure function of
/// `tokens`.
struct LmState {
  TokenSequence tokens;
  std::vector<double> cache;
};

/// Autoregressive ground-truth model: next-token distributions plus a
/// context feature vector for the encoder.
class BaseLm {
 public:
  virtual ~BaseLm() = default;

  virtual std::size_t vocab_size() const = 0;
  virtual std::size_t feature_dim() const = 0;
  virtual LmState initial_state() const = 0;
  virtual LmState advance(const LmState& state, Token token) const = 0;
  virtual std::vector<double> next_dist(const LmState& state) const = 0;
  virtual std::vector<double> featurize(const LmState& state) const = 0;
};

/// Stochasticity of next_dist and determinism of advance/featurize, probed on
/// a few short contexts. Throws ValidationError on failure.
void check_lm_conformance(const BaseLm& lm, std::size_t probe_len = 3);

/// Ancestral sample of length T.
TokenSequence lm_sample(const BaseLm& lm, std::size_t len, std::uint64_t seed);

/// log p(seq) under the LM.
double lm_loglik(const BaseLm& lm, std::span<const Token> seq);

/// Order-k tabular LM with an optional planted long-range switch.
///
/// x_1 ~ first. For later positions the row is picked by (branch, last k
/// tokens) where branch is x_1 when the switch is on and 0 otherwise; history
/// slots before the sequence start read as token 0.
///
/// Features: one-hot of x_1 followed by one-hots of the last k tokens (most
/// recent first), zeros for missing positions. Dimension (k + 1) V.
class TabularLm final : public BaseLm {
 public:
  TabularLm(std::size_t vocab, std::size_t order, std::vector<double> first,
            std::vector<std::vector<double>> tables, bool long_range_switch);

  /// i.i.d. model with the given row.
  static TabularLm iid(std::vector<double> row);

  /// V tokens, order 1. With x_1 = b, rows favor token b with mass `favor`
  /// split with a Markov component: with mass `local` the next token repeats
  /// a fixed successor of the previous token.
  static TabularLm planted(std::size_t vocab, double favor, double local);

  std::size_t vocab_size() const override { return vocab_; }
  std::size_t feature_dim() const override { return (order_ + 1) * vocab_; }
  std::size_t order() const noexcept { return order_; }
  bool long_range_switch() const noexcept { return switch_; }
  std::span<const double> first() const noexcept { return first_; }
  /// tables[branch] is V^k rows of V entries, flattened.
  const std::vector<std::vector<double>>& tables() const noexcept { return tables_; }

  LmState initial_state() const override { return {}; }
  LmState advance(const LmState& state, Token token) const override;
  std::vector<double> next_dist(const LmState& state) const override;
  std::vector<double> featurize(const LmState& state) const override;

 private:
  std::size_t vocab_;
  std::size_t order_;
  std::vector<double> first_;
  std::vector<std::vector<double>> tables_;
  bool switch_;
};

/// Wraps an HMM as a base LM: next_dist is the exact HMM predictive and the
/// features are the filtered belief (zeros before the first token).
class HmmLm final : public BaseLm {
 public:
  explicit HmmLm(std::shared_ptr<const HmmParams> params) : params_(std::move(params)) {}

  std::size_t vocab_size() const override { return params_->vocab_size(); }
  std::size_t feature_dim() const override { return params_->hidden_size(); }
  LmState initial_state() const override { return {}; }
  LmState advance(const LmState& state, Token token) const override;
  std::vector<double> next_dist(const LmState& state) const override;
  std::vector<double> featurize(const LmState& state) const override;

 private:
  std::shared_ptr<const HmmParams> params_;
};

/// Replays next-token distributions and features produced by an external LM
/// process. Input is line-delimited JSON, one object per decode step:
///   {"dist": [...V...], "features": [...F...]}
/// Line i answers for prefixes of length i; advance() only records tokens.
class StreamLm final : public BaseLm {
 public:
  explicit StreamLm(std::istream& in);

  std::size_t vocab_size() const override { return vocab_; }
  std::size_t feature_dim() const override { return features_dim_; }
  std::size_t steps() const noexcept { return dists_.size(); }
  LmState initial_state() const override { return {}; }
  LmState advance(const LmState& state, Token token) const override;
  std::vector<double> next_dist(const LmState& state) const override;
  std::vector<double> featurize(const LmState& state) const override;

 private:
  std::size_t vocab_ = 0;
  std::size_t features_dim_ = 0;
  std::vector<std::vector<double>> dists_;
  std::vector<std::vector<double>> features_;
};

}  // namespace ltla
