#pragma once

// Context-independent backward tables p(alpha | z_t, s_t) and the queries
// that combine them with a latent belief.
//
// Table layer t means "t tokens consumed since the table origin", so layer
// `horizon` is the base case. Precompute functions take no token sequence:
// a table depends only on the HMM, the constraint and the horizon.

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include "ltla/dfa.hpp"
#include "ltla/hmm.hpp"

namespace ltla {

enum class TableKind : std::uint8_t { dfa = 0, classifier = 1 };

/// Time-major table. For DFA tables entries are probabilities in [0, 1]
/// indexed (t, z, s). Classifier tables have one state and hold the log of
/// the expected future potential E[prod exp(w[x])] instead.
class LookaheadTable {
 public:
  LookaheadTable() = default;
  LookaheadTable(TableKind kind, std::size_t horizon, std::size_t hidden, std::size_t states,
                 std::uint64_t constraint_id);

  TableKind kind() const noexcept { return kind_; }
  std::size_t horizon() const noexcept { return horizon_; }
  std::size_t hidden() const noexcept { return hidden_; }
  std::size_t states() const noexcept { return states_; }
  std::uint64_t constraint_id() const noexcept { return constraint_id_; }

  double at(std::size_t t, std::size_t z, std::size_t s) const { return values_[index(t, s) + z]; }
  /// Entries over z for fixed (t, s); contiguous.
  std::span<const double> column(std::size_t t, std::size_t s) const { return {values_.data() + index(t, s), hidden_}; }
  std::span<double> column(std::size_t t, std::size_t s) { return {values_.data() + index(t, s), hidden_}; }

  std::span<const double> raw() const noexcept { return values_; }

  /// Flat little-endian binary: magic, version, kind, T, H, S, constraint id,
  /// then doubles in (t, z, s) order.
  void save(const std::filesystem::path& path) const;
  static LookaheadTable load(const std::filesystem::path& path);

  friend bool operator==(const LookaheadTable&, const LookaheadTable&) = default;

 private:
  std::size_t index(std::size_t t, std::size_t s) const { return (t * states_ + s) * hidden_; }

  TableKind kind_ = TableKind::dfa;
  std::size_t horizon_ = 0;
  std::size_t hidden_ = 0;
  std::size_t states_ = 0;
  std::uint64_t constraint_id_ = 0;
  std::vector<double> values_;
};

/// Log-linear attribute model scored as sigmoid(bias + sum_t w[x_t]).
///
/// Lookahead uses the expected-potential form: with a the logit accumulated
/// over tokens already seen and Phi = E[exp(sum_{future} w[x]) | prefix],
///     p(attr | prefix) ~= sigmoid(bias + a + log Phi).
/// Phi is exact under the HMM; the sigmoid link applied to the aggregated
/// log-potential is the approximation.
struct FactorizedClassifier {
  std::vector<double> weights;
  double bias = 0.0;

  double accumulated(std::span<const Token> tokens) const;
  std::uint64_t hash() const;
  void validate(std::size_t vocab_size) const;
};

/// Total count of table builds in this process (instrumentation).
std::size_t table_build_count();

LookaheadTable precompute_dfa_table(const HmmParams& params, const Dfa& dfa, std::size_t horizon);
LookaheadTable precompute_classifier_table(const HmmParams& params, const FactorizedClassifier& clf,
                                           std::size_t horizon);

/// sum_z belief[z] * table[t][z][s]
double query_event_prob(const Belief& belief, DfaState state, const LookaheadTable& table, std::size_t t);

/// For every next token v at once:
///   out[v] = sum_z pred[z] E[z, v] table[t+1][z][delta(s, v)]
/// where `pred` is the latent distribution for the next position. One
/// E^T-product per distinct DFA successor of s.
std::vector<double> lookahead_joint(std::span<const double> pred, DfaState state, const Dfa& dfa,
                                    const HmmParams& params, const LookaheadTable& table, std::size_t t);

/// Query from a predictive distribution (e.g. the initial distribution at the
/// sequence start): sum over v of lookahead_joint.
double query_event_prob_predictive(std::span<const double> pred, DfaState state, const Dfa& dfa,
                                   const HmmParams& params, const LookaheadTable& table, std::size_t t);

/// log E[exp(sum of future w) | belief] at layer t.
double classifier_log_potential(const Belief& belief, const LookaheadTable& table, std::size_t t);

/// For every next token v: log sum_z pred[z] E[z, v] exp(w[v]) Phi_{t+1}(z).
std::vector<double> classifier_log_joint(std::span<const double> pred, const FactorizedClassifier& clf,
                                         const HmmParams& params, const LookaheadTable& table, std::size_t t);

double query_classifier(const Belief& belief, double accumulated_logit, const FactorizedClassifier& clf,
                        const LookaheadTable& table, std::size_t t);

/// Probability that the token k >= 1 steps ahead equals v.
double query_positional(const Belief& belief, const HmmParams& params, std::size_t k, Token v);

/// Stable hash of the HMM parameters (cache key).
std::uint64_t params_hash(const HmmParams& params);

// ---------------------------------------------------------------------------
// Generic queries

struct QuerySpec {
  enum class Kind { dfa_accept, token_at_offset, eos_within, classifier_attr };
  Kind kind = Kind::dfa_accept;
  std::shared_ptr<const Dfa> dfa;      // dfa_accept: runs over context ++ continuation
  std::size_t offset = 0;              // token_at_offset / eos_within
  Token token = 0;                     // token_at_offset
  FactorizedClassifier classifier;     // classifier_attr

  static QuerySpec accept(Dfa dfa);
  static QuerySpec token_at(std::size_t k, Token v);
  static QuerySpec eos_within(std::size_t k);
  static QuerySpec attribute(FactorizedClassifier clf);
};

class TableCache;

/// p(alpha | context) for a continuation of `remaining` tokens. `prior` is
/// the latent belief at the context boundary, or nullopt at the sequence
/// start (the HMM initial distribution is used). The context tokens only set
/// the DFA state / accumulated classifier logit.
double answer_query(const QuerySpec& query, const HmmParams& params, const std::optional<Belief>& prior,
                    std::span<const Token> context, std::size_t remaining, TableCache* cache = nullptr);

// ---------------------------------------------------------------------------

/// Builds each (params, constraint, horizon) table once and hands out shared
/// immutable copies. With a directory, tables are also persisted and reloaded.
class TableCache {
 public:
  TableCache() = default;
  explicit TableCache(std::filesystem::path dir);

  std::shared_ptr<const LookaheadTable> dfa_table(const HmmParams& params, const Dfa& dfa, std::size_t horizon);
  std::shared_ptr<const LookaheadTable> classifier_table(const HmmParams& params, const FactorizedClassifier& clf,
                                                         std::size_t horizon);

  /// Tables computed by this cache (excludes disk hits).
  std::size_t builds() const;
  std::size_t builds_for(std::uint64_t constraint_id) const;
  std::size_t disk_hits() const;

 private:
  struct Key {
    std::uint64_t params;
    std::uint64_t constraint;
    std::size_t horizon;
    auto operator<=>(const Key&) const = default;
  };

  template <typename Build>
  std::shared_ptr<const LookaheadTable> get(const Key& key, Build&& build);

  std::optional<std::filesystem::path> dir_;
  mutable std::mutex mu_;
  std::map<Key, std::shared_ptr<const LookaheadTable>> tables_;
  std::map<std::uint64_t, std::size_t> builds_by_constraint_;
  std::size_t builds_ = 0;
  std::size_t disk_hits_ = 0;
};

}  // namespace ltla
