#include "ltla/dfa.hpp"

#include <algorithm>
#include <deque>
#include <map>
#include <unordered_map>

#include "ltla/errors.hpp"

namespace ltla {

namespace {

Dfa::Row compress(std::span<const DfaState> targets) {
  std::map<DfaState, std::size_t> freq;
  for (DfaState t : targets) ++freq[t];
  Dfa::Row row;
  std::size_t best = 0;
  for (auto [t, n] : freq)
    if (n > best) {
      best = n;
      row.fallback = t;
    }
  for (std::size_t v = 0; v < targets.size(); ++v)
    if (targets[v] != row.fallback) row.exceptions.emplace_back(static_cast<Token>(v), targets[v]);
  return row;
}

std::uint64_t fnv(std::uint64_t h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xffu;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

Dfa::Dfa(std::size_t alphabet, std::vector<DfaState> delta, DfaState start, std::vector<bool> accept,
         std::size_t dense_limit)
    : alphabet_(alphabet), start_(start), accept_(std::move(accept)) {
  if (alphabet_ == 0 || accept_.empty()) throw DomainError("Dfa: empty alphabet or state set");
  if (delta.size() != accept_.size() * alphabet_) throw DomainError("Dfa: delta table is not S x V");
  for (DfaState t : delta)
    if (t >= accept_.size()) throw DomainError("Dfa: transition target out of range");
  rows_.reserve(accept_.size());
  for (std::size_t s = 0; s < accept_.size(); ++s)
    rows_.push_back(compress(std::span<const DfaState>(delta).subspan(s * alphabet_, alphabet_)));
  finish(dense_limit);
}

Dfa::Dfa(std::size_t alphabet, std::vector<Row> rows, DfaState start, std::vector<bool> accept,
         std::size_t dense_limit)
    : alphabet_(alphabet), start_(start), accept_(std::move(accept)), rows_(std::move(rows)) {
  if (alphabet_ == 0 || accept_.empty()) throw DomainError("Dfa: empty alphabet or state set");
  if (rows_.size() != accept_.size()) throw DomainError("Dfa: row count differs from state count");
  for (auto& row : rows_) {
    if (row.fallback >= accept_.size()) throw DomainError("Dfa: transition target out of range");
    std::sort(row.exceptions.begin(), row.exceptions.end());
    for (std::size_t i = 0; i < row.exceptions.size(); ++i) {
      const auto [tok, tgt] = row.exceptions[i];
      if (tok >= alphabet_ || tgt >= accept_.size()) throw DomainError("Dfa: exception edge out of range");
      if (i > 0 && row.exceptions[i - 1].first == tok) throw DomainError("Dfa: duplicate edge (nondeterministic)");
    }
  }
  finish(dense_limit);
}

void Dfa::finish(std::size_t dense_limit) {
  if (start_ >= accept_.size()) throw DomainError("Dfa: start state out of range");
  const std::size_t s_count = accept_.size();
  groups_.assign(s_count, {});
  std::vector<DfaState> targets(alphabet_);
  for (std::size_t s = 0; s < s_count; ++s) {
    const Row& row = rows_[s];
    std::fill(targets.begin(), targets.end(), row.fallback);
    for (auto [tok, tgt] : row.exceptions) targets[tok] = tgt;
    std::map<DfaState, std::vector<Token>> by_target;
    for (std::size_t v = 0; v < alphabet_; ++v) by_target[targets[v]].push_back(static_cast<Token>(v));
    for (auto& [tgt, toks] : by_target) groups_[s].push_back({tgt, std::move(toks)});
  }
  if (s_count * alphabet_ <= dense_limit) {
    delta_.assign(s_count * alphabet_, 0);
    for (std::size_t s = 0; s < s_count; ++s) {
      for (std::size_t v = 0; v < alphabet_; ++v) delta_[s * alphabet_ + v] = rows_[s].fallback;
      for (auto [tok, tgt] : rows_[s].exceptions) delta_[s * alphabet_ + tok] = tgt;
    }
    rows_.clear();
    rows_.shrink_to_fit();
  }
}

Dfa Dfa::accept_all(std::size_t alphabet) {
  return Dfa(alphabet, std::vector<DfaState>(alphabet, 0), 0, std::vector<bool>{true});
}

bool Dfa::accepting(DfaState s) const {
  if (s >= accept_.size()) throw DomainError("Dfa: state out of range");
  return accept_[s];
}

std::size_t Dfa::edge_count() const noexcept {
  if (!delta_.empty()) return delta_.size();
  std::size_t m = 0;
  for (const auto& r : rows_) m += 1 + r.exceptions.size();
  return m;
}

DfaState Dfa::lookup(DfaState state, Token token) const {
  if (!delta_.empty()) return delta_[state * alphabet_ + token];
  const auto& ex = rows_[state].exceptions;
  auto it = std::lower_bound(ex.begin(), ex.end(), std::make_pair(token, DfaState{0}),
                             [](const auto& a, const auto& b) { return a.first < b.first; });
  if (it != ex.end() && it->first == token) return it->second;
  return rows_[state].fallback;
}

DfaState Dfa::step(DfaState state, Token token) const {
  if (state >= accept_.size()) throw DomainError("dfa_step: state " + std::to_string(state) + " out of range");
  if (token >= alphabet_) throw DomainError("dfa_step: token " + std::to_string(token) + " out of range");
  return lookup(state, token);
}

DfaState Dfa::run(DfaState from, std::span<const Token> tokens) const {
  DfaState s = from;
  for (Token t : tokens) s = step(s, t);
  return s;
}

Dfa::Row Dfa::row(DfaState state) const {
  if (state >= accept_.size()) throw DomainError("Dfa::row: state out of range");
  if (delta_.empty()) return rows_[state];
  return compress(std::span<const DfaState>(delta_).subspan(state * alphabet_, alphabet_));
}

std::uint64_t Dfa::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  h = fnv(h, num_states());
  h = fnv(h, alphabet_);
  h = fnv(h, start_);
  for (bool a : accept_) h = fnv(h, a ? 1 : 0);
  for (std::size_t s = 0; s < num_states(); ++s)
    for (std::size_t v = 0; v < alphabet_; ++v) h = fnv(h, lookup(static_cast<DfaState>(s), static_cast<Token>(v)));
  return h;
}

Dfa substring_dfa(std::span<const Token> keyword, std::size_t alphabet) {
  if (keyword.empty()) throw DomainError("substring_dfa: empty keyword");
  for (Token t : keyword)
    if (t >= alphabet) throw DomainError("substring_dfa: keyword token out of range");
  const std::size_t len = keyword.size();
  // KMP failure function: fail[q] = length of the longest proper border of keyword[0..q).
  std::vector<std::size_t> fail(len + 1, 0);
  for (std::size_t q = 2; q <= len; ++q) {
    std::size_t k = fail[q - 1];
    while (k > 0 && keyword[k] != keyword[q - 1]) k = fail[k];
    if (keyword[k] == keyword[q - 1]) ++k;
    fail[q] = k;
  }
  std::vector<DfaState> delta((len + 1) * alphabet);
  for (std::size_t q = 0; q <= len; ++q) {
    for (std::size_t a = 0; a < alphabet; ++a) {
      DfaState next;
      if (q == len) {
        next = static_cast<DfaState>(len);
      } else if (keyword[q] == a) {
        next = static_cast<DfaState>(q + 1);
      } else if (q == 0) {
        next = 0;
      } else {
        next = delta[fail[q] * alphabet + a];
      }
      delta[q * alphabet + a] = next;
    }
  }
  std::vector<bool> accept(len + 1, false);
  accept[len] = true;
  return Dfa(alphabet, std::move(delta), 0, std::move(accept));
}

Dfa product(const Dfa& a, const Dfa& b, const DfaBuildOptions& opts) {
  if (a.alphabet_size() != b.alphabet_size()) throw DomainError("product: alphabets differ");
  const std::size_t v_count = a.alphabet_size();
  std::unordered_map<std::uint64_t, DfaState> ids;
  std::vector<std::pair<DfaState, DfaState>> pairs;
  auto key = [](DfaState x, DfaState y) { return (static_cast<std::uint64_t>(x) << 32) | y; };
  auto intern = [&](DfaState x, DfaState y) {
    auto [it, inserted] = ids.try_emplace(key(x, y), static_cast<DfaState>(pairs.size()));
    if (inserted) {
      if (pairs.size() >= opts.state_cap)
        throw SizeGuardError("DFA state explosion: more than " + std::to_string(opts.state_cap) +
                             " states (cap " + std::to_string(opts.state_cap) + ")");
      pairs.emplace_back(x, y);
    }
    return it->second;
  };
  intern(a.start(), b.start());
  std::vector<Dfa::Row> rows;
  std::vector<DfaState> targets(v_count);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto [x, y] = pairs[i];
    for (std::size_t v = 0; v < v_count; ++v)
      targets[v] = intern(a.step(x, static_cast<Token>(v)), b.step(y, static_cast<Token>(v)));
    rows.push_back(compress(targets));
  }
  std::vector<bool> accept(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i)
    accept[i] = a.accepting(pairs[i].first) && b.accepting(pairs[i].second);
  return Dfa(v_count, std::move(rows), 0, std::move(accept), opts.dense_limit);
}

Dfa build_keyword_dfa(const KeywordSpec& spec, const Vocabulary& vocab, const DfaBuildOptions& opts) {
  if (spec.keywords.size() > opts.max_keywords)
    throw SizeGuardError("build_keyword_dfa: " + std::to_string(spec.keywords.size()) + " keywords exceeds limit of " +
                         std::to_string(opts.max_keywords));
  const std::size_t v_count = vocab.size();
  Dfa out = Dfa::accept_all(v_count);
  for (const auto& kw : spec.keywords) out = product(out, substring_dfa(kw, v_count), opts);
  return out;
}

Dfa eos_within_dfa(std::size_t k, Token eos, std::size_t alphabet) {
  if (k == 0) throw DomainError("eos_within_dfa: k must be >= 1");
  if (eos >= alphabet) throw DomainError("eos_within_dfa: eos out of range");
  const auto accept_state = static_cast<DfaState>(k);
  const auto reject_state = static_cast<DfaState>(k + 1);
  std::vector<Dfa::Row> rows(k + 2);
  for (std::size_t c = 0; c < k; ++c) {
    rows[c].fallback = c + 1 < k ? static_cast<DfaState>(c + 1) : reject_state;
    rows[c].exceptions = {{eos, accept_state}};
  }
  rows[k].fallback = accept_state;
  rows[k + 1].fallback = reject_state;
  std::vector<bool> accept(k + 2, false);
  accept[k] = true;
  return Dfa(alphabet, std::move(rows), 0, std::move(accept));
}

Dfa token_at_dfa(std::size_t position, Token v, std::size_t alphabet) {
  if (position == 0) throw DomainError("token_at_dfa: positions are 1-based");
  if (v >= alphabet) throw DomainError("token_at_dfa: token out of range");
  // States 0..position-1 count tokens read; then accept / reject sinks.
  const auto accept_state = static_cast<DfaState>(position);
  const auto reject_state = static_cast<DfaState>(position + 1);
  std::vector<Dfa::Row> rows(position + 2);
  for (std::size_t c = 0; c + 1 < position; ++c) rows[c].fallback = static_cast<DfaState>(c + 1);
  rows[position - 1].fallback = reject_state;
  rows[position - 1].exceptions = {{v, accept_state}};
  rows[position].fallback = accept_state;
  rows[position + 1].fallback = reject_state;
  std::vector<bool> accept(position + 2, false);
  accept[position] = true;
  return Dfa(alphabet, std::move(rows), 0, std::move(accept));
}

}  // namespace ltla
