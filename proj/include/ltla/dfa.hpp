#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ltla/hmm.hpp"

namespace ltla {

using DfaState = std::uint32_t;

/// Deterministic, total automaton over token ids 0..V-1.
///
/// Transitions are stored densely while S*V <= dense_limit and otherwise as
/// one default target per state plus an exception list. `edge_count()` is the
/// number of stored edges in either form.
class Dfa {
 public:
  struct SuccessorGroup {
    DfaState target;
    std::vector<Token> tokens;
  };

  /// A transition row in compressed form: every token not listed in
  /// `exceptions` goes to `fallback`. Exceptions are sorted by token.
  struct Row {
    DfaState fallback = 0;
    std::vector<std::pair<Token, DfaState>> exceptions;
  };

  static constexpr std::size_t kDefaultDenseLimit = std::size_t{1} << 20;
  static constexpr std::size_t kDefaultStateCap = std::size_t{1} << 16;

  Dfa() = default;

  /// From a dense S x V table (row-major). Validates totality.
  Dfa(std::size_t alphabet, std::vector<DfaState> delta, DfaState start, std::vector<bool> accept,
      std::size_t dense_limit = kDefaultDenseLimit);

  /// From compressed rows.
  Dfa(std::size_t alphabet, std::vector<Row> rows, DfaState start, std::vector<bool> accept,
      std::size_t dense_limit = kDefaultDenseLimit);

  /// Single accepting absorbing state.
  static Dfa accept_all(std::size_t alphabet);

  std::size_t num_states() const noexcept { return accept_.size(); }
  std::size_t alphabet_size() const noexcept { return alphabet_; }
  DfaState start() const noexcept { return start_; }
  bool accepting(DfaState s) const;
  const std::vector<bool>& accept() const noexcept { return accept_; }
  bool is_sparse() const noexcept { return delta_.empty(); }
  std::size_t edge_count() const noexcept;

  /// delta(state, token); DomainError on out-of-range indices.
  DfaState step(DfaState state, Token token) const;
  DfaState run(DfaState from, std::span<const Token> tokens) const;
  bool accepts(std::span<const Token> tokens) const { return accepting(run(start_, tokens)); }

  /// Tokens out of `state`, grouped by their target state (targets ascending).
  const std::vector<SuccessorGroup>& successors(DfaState state) const { return groups_.at(state); }

  /// Stable content hash, used as the lookahead constraint id.
  std::uint64_t hash() const;

  Row row(DfaState state) const;

 private:
  void finish(std::size_t dense_limit);
  DfaState lookup(DfaState state, Token token) const;

  std::size_t alphabet_ = 0;
  DfaState start_ = 0;
  std::vector<bool> accept_;
  std::vector<DfaState> delta_;  // dense form
  std::vector<Row> rows_;        // sparse form
  std::vector<std::vector<SuccessorGroup>> groups_;
};

/// Keywords that must all appear as contiguous token subsequences.
struct KeywordSpec {
  std::vector<TokenSequence> keywords;
};

struct DfaBuildOptions {
  std::size_t state_cap = Dfa::kDefaultStateCap;
  std::size_t dense_limit = Dfa::kDefaultDenseLimit;
  std::size_t max_keywords = 8;
};

/// Product of per-keyword substring automata (KMP failure links, absorbing
/// accept), pruned to reachable states. No minimization.
Dfa build_keyword_dfa(const KeywordSpec& spec, const Vocabulary& vocab, const DfaBuildOptions& opts = {});

/// Substring automaton for a single keyword: states 0..|w|, |w| absorbing.
Dfa substring_dfa(std::span<const Token> keyword, std::size_t alphabet);

/// Intersection of languages, reachable-pruned. SizeGuardError past the cap.
Dfa product(const Dfa& a, const Dfa& b, const DfaBuildOptions& opts = {});

/// Accepts iff `eos` occurs among the first k tokens (k + 2 states: k
/// counters, accept sink, reject sink).
Dfa eos_within_dfa(std::size_t k, Token eos, std::size_t alphabet);

/// Accepts iff the token at 1-based position `position` equals v.
Dfa token_at_dfa(std::size_t position, Token v, std::size_t alphabet);

}  // namespace ltla
