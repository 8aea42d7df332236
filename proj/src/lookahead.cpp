#include "ltla/lookahead.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "ltla/errors.hpp"
#include "ltla/simd.hpp"

namespace ltla {

namespace {

std::atomic<std::size_t> g_builds{0};

constexpr char kMagic[4] = {'L', 'T', 'L', 'A'};
constexpr std::uint32_t kVersion = 1;

void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  os.write(b, 8);
}

std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw ValidationError("lookahead table file is truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t fnv_bytes(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv_doubles(std::uint64_t h, std::span<const double> xs) {
  for (double x : xs) {
    const auto bits = std::bit_cast<std::uint64_t>(x);
    h = fnv_bytes(h, &bits, sizeof bits);
  }
  return h;
}

std::uint64_t operator_hash(std::uint64_t h, const StochasticOperator& op) {
  if (op.is_dense()) {
    h = fnv_bytes(h, "dense", 5);
    return fnv_doubles(h, op.dense().data());
  }
  const auto& m = op.monarch();
  h = fnv_bytes(h, "monarch", 7);
  const std::uint64_t b = m.block();
  h = fnv_bytes(h, &b, sizeof b);
  h = fnv_doubles(h, m.left());
  h = fnv_doubles(h, m.right());
  return fnv_doubles(h, m.row_scale());
}

double log_sum_exp(std::span<const double> xs) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : xs) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - mx);
  return mx + std::log(s);
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_t(const LookaheadTable& table, std::size_t t) {
  if (t > table.horizon()) throw DomainError("lookahead: position " + std::to_string(t) + " beyond table horizon");
}

}  // namespace

LookaheadTable::LookaheadTable(TableKind kind, std::size_t horizon, std::size_t hidden, std::size_t states,
                               std::uint64_t constraint_id)
    : kind_(kind),
      horizon_(horizon),
      hidden_(hidden),
      states_(states),
      constraint_id_(constraint_id),
      values_((horizon + 1) * hidden * states, 0.0) {}

void LookaheadTable::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write lookahead table " + path.string());
  os.write(kMagic, 4);
  put_u64(os, kVersion);
  put_u64(os, static_cast<std::uint64_t>(kind_));
  put_u64(os, horizon_);
  put_u64(os, hidden_);
  put_u64(os, states_);
  put_u64(os, constraint_id_);
  for (std::size_t t = 0; t <= horizon_; ++t)
    for (std::size_t z = 0; z < hidden_; ++z)
      for (std::size_t s = 0; s < states_; ++s) put_u64(os, std::bit_cast<std::uint64_t>(at(t, z, s)));
}

LookaheadTable LookaheadTable::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read lookahead table " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw ValidationError("not a lookahead table file");
  if (get_u64(is) != kVersion) throw ValidationError("unsupported lookahead table version");
  const auto kind = static_cast<TableKind>(get_u64(is));
  const std::size_t horizon = get_u64(is);
  const std::size_t hidden = get_u64(is);
  const std::size_t states = get_u64(is);
  const std::uint64_t id = get_u64(is);
  LookaheadTable table(kind, horizon, hidden, states, id);
  for (std::size_t t = 0; t <= horizon; ++t)
    for (std::size_t z = 0; z < hidden; ++z)
      for (std::size_t s = 0; s < states; ++s) table.column(t, s)[z] = std::bit_cast<double>(get_u64(is));
  return table;
}

double FactorizedClassifier::accumulated(std::span<const Token> tokens) const {
  double a = 0.0;
  for (Token t : tokens) {
    if (t >= weights.size()) throw DomainError("classifier: token out of range");
    a += weights[t];
  }
  return a;
}

std::uint64_t FactorizedClassifier::hash() const {
  std::uint64_t h = fnv_bytes(0xcbf29ce484222325ULL, "clf", 3);
  h = fnv_doubles(h, weights);
  return fnv_doubles(h, std::span<const double>(&bias, 1));
}

void FactorizedClassifier::validate(std::size_t vocab_size) const {
  if (weights.size() != vocab_size) throw ValidationError("classifier: weight table must have one entry per token");
  for (double w : weights)
    if (!std::isfinite(w)) throw ValidationError("classifier: weights must be finite");
  if (!std::isfinite(bias)) throw ValidationError("classifier: bias must be finite");
}

std::size_t table_build_count() { return g_builds.load(); }

std::uint64_t params_hash(const HmmParams& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  h = fnv_doubles(h, params.initial());
  h = operator_hash(h, params.transition());
  h = operator_hash(h, params.emission());
  const std::uint64_t t = params.max_len();
  return fnv_bytes(h, &t, sizeof t);
}

LookaheadTable precompute_dfa_table(const HmmParams& params, const Dfa& dfa, std::size_t horizon) {
  if (horizon > params.max_len()) throw DomainError("precompute_dfa_table: horizon exceeds max_len");
  if (dfa.alphabet_size() != params.vocab_size()) throw DomainError("precompute_dfa_table: DFA alphabet != V");
  ++g_builds;
  const std::size_t h = params.hidden_size();
  const std::size_t s_count = dfa.num_states();
  LookaheadTable table(TableKind::dfa, horizon, h, s_count, dfa.hash());

  // Emission mass of each successor group: E * 1{tokens}, one vector per (s, group).
  std::vector<std::vector<std::vector<double>>> group_mass(s_count);
  std::vector<double> indicator(params.vocab_size());
  for (std::size_t s = 0; s < s_count; ++s) {
    for (const auto& g : dfa.successors(static_cast<DfaState>(s))) {
      std::fill(indicator.begin(), indicator.end(), 0.0);
      for (Token v : g.tokens) indicator[v] = 1.0;
      group_mass[s].push_back(params.emission().right_mul(indicator));
    }
  }

  for (std::size_t s = 0; s < s_count; ++s) {
    auto col = table.column(horizon, s);
    std::fill(col.begin(), col.end(), dfa.accepting(static_cast<DfaState>(s)) ? 1.0 : 0.0);
  }
  std::vector<double> u(h);
  for (std::size_t t = horizon; t > 0; --t) {
    for (std::size_t s = 0; s < s_count; ++s) {
      std::fill(u.begin(), u.end(), 0.0);
      const auto& groups = dfa.successors(static_cast<DfaState>(s));
      for (std::size_t g = 0; g < groups.size(); ++g)
        simd::mul_acc(group_mass[s][g], table.column(t, groups[g].target), u);
      const std::vector<double> next = params.transition().right_mul(u);
      std::copy(next.begin(), next.end(), table.column(t - 1, s).begin());
    }
  }
  return table;
}

LookaheadTable precompute_classifier_table(const HmmParams& params, const FactorizedClassifier& clf,
                                           std::size_t horizon) {
  if (horizon > params.max_len()) throw DomainError("precompute_classifier_table: horizon exceeds max_len");
  clf.validate(params.vocab_size());
  ++g_builds;
  const std::size_t h = params.hidden_size();
  LookaheadTable table(TableKind::classifier, horizon, h, 1, clf.hash());

  const double w_max = *std::max_element(clf.weights.begin(), clf.weights.end());
  std::vector<double> shifted(clf.weights.size());
  for (std::size_t v = 0; v < shifted.size(); ++v) shifted[v] = std::exp(clf.weights[v] - w_max);
  // g[z] = sum_x E[z, x] exp(w[x] - w_max)
  const std::vector<double> g = params.emission().right_mul(shifted);

  std::vector<double> v(h);
  for (std::size_t t = horizon; t > 0; --t) {
    const auto cur = table.column(t, 0);
    const double m = *std::max_element(cur.begin(), cur.end());
    if (!std::isfinite(m)) throw NumericalAbort("classifier table: non-finite log potential");
    for (std::size_t z = 0; z < h; ++z) v[z] = g[z] * std::exp(cur[z] - m);
    const std::vector<double> next = params.transition().right_mul(v);
    auto out = table.column(t - 1, 0);
    for (std::size_t z = 0; z < h; ++z) out[z] = std::log(next[z]) + m + w_max;
  }
  return table;
}

double query_event_prob(const Belief& belief, DfaState state, const LookaheadTable& table, std::size_t t) {
  check_t(table, t);
  if (table.kind() != TableKind::dfa) throw DomainError("query_event_prob: not a DFA table");
  if (state >= table.states()) throw DomainError("query_event_prob: DFA state out of range");
  if (belief.probs.size() != table.hidden()) throw DomainError("query_event_prob: belief size mismatch");
  return simd::dot(belief.probs, table.column(t, state));
}

std::vector<double> lookahead_joint(std::span<const double> pred, DfaState state, const Dfa& dfa,
                                    const HmmParams& params, const LookaheadTable& table, std::size_t t) {
  if (t + 1 > table.horizon()) throw DomainError("lookahead_joint: no table layer after position " + std::to_string(t));
  if (pred.size() != table.hidden()) throw DomainError("lookahead_joint: belief size mismatch");
  std::vector<double> out(params.vocab_size(), 0.0);
  std::vector<double> weighted(pred.size());
  for (const auto& g : dfa.successors(state)) {
    simd::mul(pred, table.column(t + 1, g.target), weighted);
    const std::vector<double> r = params.emission().left_mul(weighted);
    for (Token v : g.tokens) out[v] = r[v];
  }
  return out;
}

double query_event_prob_predictive(std::span<const double> pred, DfaState state, const Dfa& dfa,
                                   const HmmParams& params, const LookaheadTable& table, std::size_t t) {
  const std::vector<double> joint = lookahead_joint(pred, state, dfa, params, table, t);
  return simd::sum(joint);
}

double classifier_log_potential(const Belief& belief, const LookaheadTable& table, std::size_t t) {
  check_t(table, t);
  if (table.kind() != TableKind::classifier) throw DomainError("classifier query on a non-classifier table");
  const auto col = table.column(t, 0);
  std::vector<double> terms(col.size());
  for (std::size_t z = 0; z < col.size(); ++z)
    terms[z] = belief.probs[z] > 0.0 ? std::log(belief.probs[z]) + col[z] : -std::numeric_limits<double>::infinity();
  return log_sum_exp(terms);
}

std::vector<double> classifier_log_joint(std::span<const double> pred, const FactorizedClassifier& clf,
                                         const HmmParams& params, const LookaheadTable& table, std::size_t t) {
  if (t + 1 > table.horizon()) throw DomainError("classifier_log_joint: no table layer after position t");
  const auto col = table.column(t + 1, 0);
  const double m = *std::max_element(col.begin(), col.end());
  std::vector<double> weighted(pred.size());
  for (std::size_t z = 0; z < pred.size(); ++z) weighted[z] = pred[z] * std::exp(col[z] - m);
  std::vector<double> out = params.emission().left_mul(weighted);
  for (std::size_t v = 0; v < out.size(); ++v)
    out[v] = out[v] > 0.0 ? std::log(out[v]) + clf.weights[v] + m : -std::numeric_limits<double>::infinity();
  return out;
}

double query_classifier(const Belief& belief, double accumulated_logit, const FactorizedClassifier& clf,
                        const LookaheadTable& table, std::size_t t) {
  return sigmoid(clf.bias + accumulated_logit + classifier_log_potential(belief, table, t));
}

double query_positional(const Belief& belief, const HmmParams& params, std::size_t k, Token v) {
  if (k == 0) throw DomainError("query_positional: k must be >= 1");
  params.check_token(v);
  std::vector<double> p = belief.probs;
  for (std::size_t i = 0; i < k; ++i) p = params.propagate(p);
  return params.emission().left_mul(p)[v];
}

QuerySpec QuerySpec::accept(Dfa dfa) {
  QuerySpec q;
  q.kind = Kind::dfa_accept;
  q.dfa = std::make_shared<const Dfa>(std::move(dfa));
  return q;
}

QuerySpec QuerySpec::token_at(std::size_t k, Token v) {
  QuerySpec q;
  q.kind = Kind::token_at_offset;
  q.offset = k;
  q.token = v;
  return q;
}

QuerySpec QuerySpec::eos_within(std::size_t k) {
  QuerySpec q;
  q.kind = Kind::eos_within;
  q.offset = k;
  return q;
}

QuerySpec QuerySpec::attribute(FactorizedClassifier clf) {
  QuerySpec q;
  q.kind = Kind::classifier_attr;
  q.classifier = std::move(clf);
  return q;
}

double answer_query(const QuerySpec& query, const HmmParams& params, const std::optional<Belief>& prior,
                    std::span<const Token> context, std::size_t remaining, TableCache* cache) {
  const std::size_t v_count = params.vocab_size();
  if (query.kind == QuerySpec::Kind::classifier_attr) {
    const double acc = query.classifier.accumulated(context);
    if (remaining == 0) return sigmoid(query.classifier.bias + acc);
    auto table = cache ? cache->classifier_table(params, query.classifier, remaining)
                       : std::make_shared<const LookaheadTable>(
                             precompute_classifier_table(params, query.classifier, remaining));
    double log_phi;
    if (prior) {
      log_phi = classifier_log_potential(*prior, *table, 0);
    } else {
      const auto joint = classifier_log_joint(params.initial(), query.classifier, params, *table, 0);
      log_phi = log_sum_exp(joint);
    }
    return sigmoid(query.classifier.bias + acc + log_phi);
  }

  Dfa dfa;
  DfaState state = 0;
  switch (query.kind) {
    case QuerySpec::Kind::dfa_accept:
      if (!query.dfa) throw DomainError("answer_query: dfa_accept without a DFA");
      dfa = *query.dfa;
      state = dfa.run(dfa.start(), context);
      break;
    case QuerySpec::Kind::token_at_offset:
      if (query.offset == 0 || query.offset > remaining) throw DomainError("answer_query: offset outside horizon");
      dfa = token_at_dfa(query.offset, query.token, v_count);
      state = dfa.start();
      break;
    case QuerySpec::Kind::eos_within:
      if (!params.vocab().eos) throw DomainError("answer_query: eos_within needs a vocabulary with eos");
      if (query.offset == 0 || query.offset > remaining) throw DomainError("answer_query: offset outside horizon");
      dfa = eos_within_dfa(query.offset, *params.vocab().eos, v_count);
      state = dfa.start();
      break;
    case QuerySpec::Kind::classifier_attr:
      break;
  }
  if (remaining == 0) return dfa.accepting(state) ? 1.0 : 0.0;
  auto table = cache ? cache->dfa_table(params, dfa, remaining)
                     : std::make_shared<const LookaheadTable>(precompute_dfa_table(params, dfa, remaining));
  if (prior) return query_event_prob(*prior, state, *table, 0);
  return query_event_prob_predictive(params.initial(), state, dfa, params, *table, 0);
}

// ---------------------------------------------------------------------------

TableCache::TableCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(*dir_);
}

template <typename Build>
std::shared_ptr<const LookaheadTable> TableCache::get(const Key& key, Build&& build) {
  std::lock_guard lock(mu_);
  if (auto it = tables_.find(key); it != tables_.end()) return it->second;
  std::shared_ptr<const LookaheadTable> table;
  std::optional<std::filesystem::path> file;
  if (dir_) {
    std::ostringstream name;
    name << std::hex << key.params << "_" << key.constraint << std::dec << "_" << key.horizon << ".bin";
    file = *dir_ / name.str();
    if (std::filesystem::exists(*file)) {
      auto loaded = LookaheadTable::load(*file);
      if (loaded.constraint_id() == key.constraint && loaded.horizon() == key.horizon) {
        table = std::make_shared<const LookaheadTable>(std::move(loaded));
        ++disk_hits_;
      }
    }
  }
  if (!table) {
    table = std::make_shared<const LookaheadTable>(build());
    ++builds_;
    ++builds_by_constraint_[key.constraint];
    if (file) table->save(*file);
  }
  tables_.emplace(key, table);
  return table;
}

std::shared_ptr<const LookaheadTable> TableCache::dfa_table(const HmmParams& params, const Dfa& dfa,
                                                            std::size_t horizon) {
  return get({params_hash(params), dfa.hash(), horizon},
             [&] { return precompute_dfa_table(params, dfa, horizon); });
}

std::shared_ptr<const LookaheadTable> TableCache::classifier_table(const HmmParams& params,
                                                                   const FactorizedClassifier& clf,
                                                                   std::size_t horizon) {
  return get({params_hash(params), clf.hash(), horizon},
             [&] { return precompute_classifier_table(params, clf, horizon); });
}

std::size_t TableCache::builds() const {
  std::lock_guard lock(mu_);
  return builds_;
}

std::size_t TableCache::builds_for(std::uint64_t constraint_id) const {
  std::lock_guard lock(mu_);
  auto it = builds_by_constraint_.find(constraint_id);
  return it == builds_by_constraint_.end() ? 0 : it->second;
}

std::size_t TableCache::disk_hits() const {
  std::lock_guard lock(mu_);
  return disk_hits_;
}

}  // namespace ltla
