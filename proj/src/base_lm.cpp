#include "ltla/base_lm.hpp"

#include <cmath>
#include <limits>
#include <string>

#include <json.hpp>

#include "ltla/errors.hpp"
#include "ltla/rng.hpp"

namespace ltla {

namespace {

void check_row(std::span<const double> row, std::size_t v, const std::string& what) {
  if (row.size() != v) throw ValidationError(what + ": row has wrong length");
  double s = 0.0;
  for (double p : row) {
    if (!(p >= 0.0)) throw ValidationError(what + ": negative or NaN probability");
    s += p;
  }
  if (std::abs(s - 1.0) > kProbTol) throw ValidationError(what + ": row sums to " + std::to_string(s));
}

std::size_t ipow(std::size_t base, std::size_t exp) {
  std::size_t r = 1;
  for (std::size_t i = 0; i < exp; ++i) r *= base;
  return r;
}

}  // namespace

void check_lm_conformance(const BaseLm& lm, std::size_t probe_len) {
  const std::size_t v = lm.vocab_size();
  LmState state = lm.initial_state();
  for (std::size_t step = 0; step <= probe_len; ++step) {
    const auto dist = lm.next_dist(state);
    check_row(dist, v, "next_dist");
    if (lm.next_dist(state) != dist) throw ValidationError("next_dist is not deterministic");
    const auto feats = lm.featurize(state);
    if (feats.size() != lm.feature_dim()) throw ValidationError("featurize returned the wrong dimension");
    if (lm.featurize(state) != feats) throw ValidationError("featurize is not deterministic");
    if (step == probe_len) break;
    // Follow the most likely token so the probe stays on supported contexts.
    Token best = 0;
    for (std::size_t t = 1; t < v; ++t)
      if (dist[t] > dist[best]) best = static_cast<Token>(t);
    const LmState a = lm.advance(state, best);
    const LmState b = lm.advance(state, best);
    if (a.tokens != b.tokens || a.cache != b.cache) throw ValidationError("advance is not deterministic");
    state = a;
  }
}

TokenSequence lm_sample(const BaseLm& lm, std::size_t len, std::uint64_t seed) {
  Rng rng(seed);
  LmState state = lm.initial_state();
  for (std::size_t t = 0; t < len; ++t) {
    const auto dist = lm.next_dist(state);
    state = lm.advance(state, static_cast<Token>(rng.categorical(dist)));
  }
  return state.tokens;
}

double lm_loglik(const BaseLm& lm, std::span<const Token> seq) {
  LmState state = lm.initial_state();
  double ll = 0.0;
  for (Token t : seq) {
    const auto dist = lm.next_dist(state);
    if (t >= dist.size()) throw DomainError("lm_loglik: token out of range");
    ll += std::log(dist[t]);
    state = lm.advance(state, t);
  }
  return ll;
}

// ---------------------------------------------------------------------------

TabularLm::TabularLm(std::size_t vocab, std::size_t order, std::vector<double> first,
                     std::vector<std::vector<double>> tables, bool long_range_switch)
    : vocab_(vocab), order_(order), first_(std::move(first)), tables_(std::move(tables)), switch_(long_range_switch) {
  if (vocab_ == 0) throw ValidationError("TabularLm: empty vocabulary");
  if (ipow(vocab_, order_) > (std::size_t{1} << 20)) throw SizeGuardError("TabularLm: V^k too large");
  check_row(first_, vocab_, "TabularLm first");
  const std::size_t branches = switch_ ? vocab_ : 1;
  if (tables_.size() != branches) throw ValidationError("TabularLm: expected one table per branch");
  const std::size_t rows = ipow(vocab_, order_);
  for (const auto& t : tables_) {
    if (t.size() != rows * vocab_) throw ValidationError("TabularLm: table must have V^k rows of V");
    for (std::size_t r = 0; r < rows; ++r)
      check_row(std::span<const double>(t).subspan(r * vocab_, vocab_), vocab_, "TabularLm table");
  }
}

TabularLm TabularLm::iid(std::vector<double> row) {
  const std::size_t v = row.size();
  std::vector<std::vector<double>> tables{row};
  return TabularLm(v, 0, std::move(row), std::move(tables), false);
}

TabularLm TabularLm::planted(std::size_t vocab, double favor, double local) {
  if (favor < 0 || local < 0 || favor + local > 1.0) throw DomainError("planted: favor + local must be in [0, 1]");
  const double rest = (1.0 - favor - local) / static_cast<double>(vocab);
  std::vector<std::vector<double>> tables(vocab, std::vector<double>(vocab * vocab, rest));
  for (std::size_t b = 0; b < vocab; ++b) {
    for (std::size_t prev = 0; prev < vocab; ++prev) {
      double* row = tables[b].data() + prev * vocab;
      row[b] += favor;
      row[(prev + 1) % vocab] += local;
    }
  }
  std::vector<double> first(vocab, 1.0 / static_cast<double>(vocab));
  return TabularLm(vocab, 1, std::move(first), std::move(tables), true);
}

LmState TabularLm::advance(const LmState& state, Token token) const {
  if (token >= vocab_) throw DomainError("TabularLm::advance: token out of range");
  LmState next = state;
  next.tokens.push_back(token);
  return next;
}

std::vector<double> TabularLm::next_dist(const LmState& state) const {
  const auto& toks = state.tokens;
  if (toks.empty()) return first_;
  const std::size_t branch = switch_ ? toks.front() : 0;
  std::size_t row = 0;
  for (std::size_t i = 0; i < order_; ++i) {
    // Most recent token is the least significant digit.
    const Token tok = i < toks.size() ? toks[toks.size() - 1 - i] : 0;
    row += tok * ipow(vocab_, i);
  }
  const auto& table = tables_[branch];
  return {table.begin() + static_cast<std::ptrdiff_t>(row * vocab_),
          table.begin() + static_cast<std::ptrdiff_t>((row + 1) * vocab_)};
}

std::vector<double> TabularLm::featurize(const LmState& state) const {
  std::vector<double> f(feature_dim(), 0.0);
  const auto& toks = state.tokens;
  if (toks.empty()) return f;
  f[toks.front()] = 1.0;
  for (std::size_t i = 0; i < order_ && i < toks.size(); ++i) f[(i + 1) * vocab_ + toks[toks.size() - 1 - i]] = 1.0;
  return f;
}

// ---------------------------------------------------------------------------

LmState HmmLm::advance(const LmState& state, Token token) const {
  LmState next;
  next.tokens = state.tokens;
  next.tokens.push_back(token);
  if (state.tokens.empty()) {
    auto b = try_absorb(params_->initial(), 0.0, token, *params_);
    if (!b) throw ImpossibleObservation(token);
    next.cache = std::move(b->probs);
  } else {
    next.cache = forward_step(Belief{state.cache, 0.0}, token, *params_).probs;
  }
  return next;
}

std::vector<double> HmmLm::next_dist(const LmState& state) const {
  if (state.tokens.empty()) return params_->emission().left_mul(params_->initial());
  return params_->emission().left_mul(params_->propagate(state.cache));
}

std::vector<double> HmmLm::featurize(const LmState& state) const {
  if (state.tokens.empty()) return std::vector<double>(params_->hidden_size(), 0.0);
  return state.cache;
}

// ---------------------------------------------------------------------------

StreamLm::StreamLm(std::istream& in) {
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = nlohmann::json::parse(line);
    auto dist = j.at("dist").get<std::vector<double>>();
    auto feats = j.contains("features") ? j.at("features").get<std::vector<double>>() : std::vector<double>{};
    if (dists_.empty()) {
      vocab_ = dist.size();
      features_dim_ = feats.size();
    }
    check_row(dist, vocab_, "stream dist line " + std::to_string(dists_.size()));
    if (feats.size() != features_dim_) throw ValidationError("stream: inconsistent feature dimension");
    dists_.push_back(std::move(dist));
    features_.push_back(std::move(feats));
  }
  if (dists_.empty()) throw ValidationError("stream: no steps");
}

LmState StreamLm::advance(const LmState& state, Token token) const {
  if (token >= vocab_) throw DomainError("StreamLm::advance: token out of range");
  LmState next = state;
  next.tokens.push_back(token);
  return next;
}

std::vector<double> StreamLm::next_dist(const LmState& state) const {
  if (state.tokens.size() >= dists_.size()) throw DomainError("stream: no distribution recorded for this step");
  return dists_[state.tokens.size()];
}

std::vector<double> StreamLm::featurize(const LmState& state) const {
  if (state.tokens.size() >= features_.size()) throw DomainError("stream: no features recorded for this step");
  return features_[state.tokens.size()];
}

}  // namespace ltla
