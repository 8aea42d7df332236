#include "ltla/distill.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>

#include <json.hpp>

#include "ltla/errors.hpp"
#include "ltla/parallel.hpp"
#include "ltla/rng.hpp"
#include "ltla/simd.hpp"

namespace ltla {

using nlohmann::json;

TokenSequence DistillRecord::full() const {
  TokenSequence s = context;
  s.insert(s.end(), continuation.begin(), continuation.end());
  return s;
}

void DistillDataset::validate() const {
  if (seq_len < 2) throw ValidationError("dataset: sequence length must be >= 2");
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.context.size() + r.continuation.size() != seq_len || r.context.empty() || r.continuation.empty())
      throw ValidationError("dataset: record " + std::to_string(i) + " violates the split invariant");
  }
}

std::vector<TokenSequence> DistillDataset::sequences() const {
  std::vector<TokenSequence> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.full());
  return out;
}

std::vector<HybridExample> DistillDataset::hybrid_examples() const {
  std::vector<HybridExample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({r.features, r.continuation});
  return out;
}

void DistillDataset::write_jsonl(std::ostream& out) const {
  out << json{{"meta", {{"source", source}, {"seq_len", seq_len}, {"seed", seed}, {"records", records.size()}}}}.dump()
      << '\n';
  for (const auto& r : records)
    out << json{{"context", r.context}, {"continuation", r.continuation}, {"features", r.features}}.dump() << '\n';
}

DistillDataset DistillDataset::read_jsonl(std::istream& in) {
  DistillDataset ds;
  std::string line;
  bool have_meta = false;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json j = json::parse(line);
    if (!have_meta) {
      if (!j.contains("meta")) throw ValidationError("dataset: first line must be a meta object");
      const auto& m = j.at("meta");
      ds.source = m.value("source", "");
      ds.seq_len = m.at("seq_len").get<std::size_t>();
      ds.seed = m.value("seed", std::uint64_t{0});
      have_meta = true;
      continue;
    }
    DistillRecord r;
    r.context = j.at("context").get<TokenSequence>();
    r.continuation = j.at("continuation").get<TokenSequence>();
    r.features = j.value("features", std::vector<double>{});
    ds.records.push_back(std::move(r));
  }
  if (!have_meta) throw ValidationError("dataset: empty file");
  ds.validate();
  return ds;
}

DistillDataset sample_dataset(const BaseLm& lm, std::size_t n, std::size_t seq_len, std::uint64_t seed,
                              std::string source) {
  if (n == 0) throw DomainError("sample_dataset: N must be >= 1");
  if (seq_len < 2) throw DomainError("sample_dataset: T must be >= 2");
  DistillDataset ds;
  ds.source = std::move(source);
  ds.seq_len = seq_len;
  ds.seed = seed;
  ds.records.resize(n);
  const std::uint64_t base = derive_seed(seed, "records");
  parallel_for(n, [&](std::size_t b, std::size_t e, std::size_t) {
    for (std::size_t i = b; i < e; ++i) {
      Rng rng(derive_seed(base + i, "record"));
      const std::size_t split = 1 + rng.below(seq_len - 1);
      LmState state = lm.initial_state();
      DistillRecord& rec = ds.records[i];
      for (std::size_t t = 0; t < seq_len; ++t) {
        if (t == split) rec.features = lm.featurize(state);
        const auto dist = lm.next_dist(state);
        const auto tok = static_cast<Token>(rng.categorical(dist));
        (t < split ? rec.context : rec.continuation).push_back(tok);
        state = lm.advance(state, tok);
      }
    }
  });
  return ds;
}

// ---------------------------------------------------------------------------
// EM

namespace {

struct Counts {
  std::vector<double> init;
  std::vector<double> trans;  // H x H
  std::vector<double> emit;   // H x V
  double loglik = 0.0;
  std::size_t degenerate = 0;

  Counts(std::size_t h, std::size_t v) : init(h, 0.0), trans(h * h, 0.0), emit(h * v, 0.0) {}

  void add(const Counts& o) {
    simd::axpy(1.0, o.init, init);
    simd::axpy(1.0, o.trans, trans);
    simd::axpy(1.0, o.emit, emit);
    loglik += o.loglik;
    degenerate += o.degenerate;
  }
};

struct DenseModel {
  std::size_t h = 0;
  std::size_t v = 0;
  std::vector<double> pi;
  DenseMatrix a;
  DenseMatrix e_t;  // V x H, row v = E[:, v]

  explicit DenseModel(const HmmParams& p)
      : h(p.hidden_size()), v(p.vocab_size()), pi(p.initial().begin(), p.initial().end()),
        a(p.transition().to_dense()), e_t(p.emission().to_dense().transpose()) {}
};

// Scaled forward-backward for one sequence. With `prior`, the first token is
// emitted from prior . A and the boundary transition is counted; otherwise
// from pi and the initial state is counted.
bool accumulate(std::span<const Token> seq, const std::vector<double>* prior, const DenseModel& m, Counts& c) {
  const std::size_t n = seq.size();
  const std::size_t h = m.h;
  std::vector<double> alpha(n * h);
  std::vector<double> scale(n);
  std::vector<double> pred = prior ? m.a.left_mul(*prior) : m.pi;
  double ll = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    std::span<double> at(alpha.data() + t * h, h);
    simd::mul(pred, m.e_t.row(seq[t]), at);
    const double s = simd::sum(at);
    if (!(s > 0.0)) return false;
    simd::scale(1.0 / s, at);
    scale[t] = s;
    ll += std::log(s);
    if (t + 1 < n) pred = m.a.left_mul(at);
  }
  std::vector<double> beta(h, 1.0);
  std::vector<double> w(h);
  for (std::size_t t = n; t-- > 0;) {
    std::span<const double> at(alpha.data() + t * h, h);
    for (std::size_t z = 0; z < h; ++z) c.emit[z * m.v + seq[t]] += at[z] * beta[z];
    // w = E[:, x_t] * beta_t / c_t, used for the transition into position t.
    simd::mul(m.e_t.row(seq[t]), beta, w);
    simd::scale(1.0 / scale[t], w);
    const double* from = nullptr;
    if (t > 0) from = alpha.data() + (t - 1) * h;
    else if (prior) from = prior->data();
    if (from) {
      for (std::size_t i = 0; i < h; ++i) {
        if (from[i] == 0.0) continue;
        const auto arow = m.a.row(i);
        double* trow = c.trans.data() + i * h;
        for (std::size_t j = 0; j < h; ++j) trow[j] += from[i] * arow[j] * w[j];
      }
    }
    if (t == 0 && !prior) {
      for (std::size_t z = 0; z < h; ++z) c.init[z] += at[z] * beta[z];
    }
    if (t > 0) beta = m.a.right_mul(w);
  }
  c.loglik += ll;
  return true;
}

Counts e_step(const std::vector<TokenSequence>& data, const std::vector<std::vector<double>>* priors,
              const HmmParams& params) {
  const DenseModel m(params);
  const std::size_t chunks = parallel_chunks(data.size());
  std::vector<Counts> part(chunks, Counts(m.h, m.v));
  parallel_for(data.size(), [&](std::size_t b, std::size_t e, std::size_t w) {
    for (std::size_t i = b; i < e; ++i) {
      if (data[i].empty()) continue;
      if (!accumulate(data[i], priors ? &(*priors)[i] : nullptr, m, part[w])) ++part[w].degenerate;
    }
  });
  Counts total(m.h, m.v);
  for (const auto& p : part) total.add(p);
  return total;
}

std::vector<double> random_simplex(std::size_t n, Rng& rng) {
  std::vector<double> p(n);
  double s = 0.0;
  for (double& x : p) s += (x = -std::log(1.0 - rng.uniform()) + 1e-3);
  for (double& x : p) x /= s;
  return p;
}

// Normalizes rows of `counts` (rows x cols); rows with no mass are re-drawn.
std::vector<double> normalize_rows(const std::vector<double>& counts, std::size_t rows, std::size_t cols, Rng& rng,
                                   const char* what, std::vector<std::string>& warnings) {
  std::vector<double> out(counts);
  for (std::size_t r = 0; r < rows; ++r) {
    std::span<double> row(out.data() + r * cols, cols);
    const double s = simd::sum(row);
    if (s > 0.0) {
      simd::scale(1.0 / s, row);
    } else {
      const auto fresh = random_simplex(cols, rng);
      std::copy(fresh.begin(), fresh.end(), row.begin());
      warnings.push_back(std::string("em: ") + what + " row " + std::to_string(r) + " had zero posterior mass; re-jittered");
    }
  }
  return out;
}

// ---- Monarch M-step --------------------------------------------------------

std::size_t default_block(std::size_t h) {
  std::size_t best = 1;
  for (std::size_t b = 1; b * b <= h; ++b)
    if (h % b == 0) best = b;
  return best;
}

// Expected complete-data objective sum_ij xi_ij log M_ij.
double monarch_objective(const MonarchMatrix& m, const std::vector<double>& xi) {
  const DenseMatrix d = m.materialize();
  double q = 0.0;
  for (std::size_t i = 0; i < xi.size(); ++i) {
    if (xi[i] == 0.0) continue;
    const double p = d.data()[i];
    if (!(p > 0.0)) return -std::numeric_limits<double>::infinity();
    q += xi[i] * std::log(p);
  }
  return q;
}

// Gradient of the objective w.r.t. the log-parameters of both factors.
void monarch_gradient(const MonarchMatrix& m, const std::vector<double>& xi, std::vector<double>& gl,
                      std::vector<double>& gr) {
  const std::size_t rows = m.rows();
  const std::size_t cols = m.cols();
  const std::size_t b = m.block();
  const std::size_t k = rows / b;
  const std::size_t cw = cols / b;
  const auto left = m.left();
  const auto right = m.right();
  const auto& perm = m.perm();
  const auto scale = m.row_scale();
  const DenseMatrix d = m.materialize();

  // dQ/dN with N = L P R unnormalized and M = N / rowsum(N).
  std::vector<double> g(rows * cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double cr = 0.0;
    for (std::size_t c = 0; c < cols; ++c) cr += xi[r * cols + c];
    for (std::size_t c = 0; c < cols; ++c) {
      const double n = d(r, c) * scale[r];
      const double x = xi[r * cols + c];
      g[r * cols + c] = (x > 0.0 ? x / n : 0.0) - cr / scale[r];
    }
  }
  auto rm = [&](std::size_t q, std::size_t c) -> double {
    if (c / cw != q / k) return 0.0;
    return right[q * cw + (c % cw)];
  };
  gl.assign(left.size(), 0.0);
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < b; ++j) {
        const std::size_t r = a * b + i;
        const std::size_t q = perm[a * b + j];
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += g[r * cols + c] * rm(q, c);
        const std::size_t idx = (a * b + i) * b + j;
        gl[idx] = s * left[idx];
      }
  gr.assign(right.size(), 0.0);
  for (std::size_t inner = 0; inner < rows; ++inner) {
    const std::size_t q = perm[inner];
    const std::size_t blk = inner / b;
    const std::size_t col_in_block = inner % b;
    const std::size_t cb = q / k;
    for (std::size_t i2 = 0; i2 < b; ++i2) {
      const std::size_t r = blk * b + i2;
      const double l = left[(blk * b + i2) * b + col_in_block];
      for (std::size_t j = 0; j < cw; ++j) gr[q * cw + j] += l * g[r * cols + cb * cw + j];
    }
  }
  for (std::size_t i = 0; i < gr.size(); ++i) gr[i] *= right[i];
}

MonarchMatrix monarch_m_step(const MonarchMatrix& start, const std::vector<double>& xi, std::size_t steps) {
  MonarchMatrix cur = start;
  double q = monarch_objective(cur, xi);
  double total = 0.0;
  for (double x : xi) total += x;
  if (total <= 0.0) return cur;
  double eta = 1.0;
  std::vector<double> gl;
  std::vector<double> gr;
  for (std::size_t it = 0; it < steps; ++it) {
    monarch_gradient(cur, xi, gl, gr);
    // Per-count gradient keeps the step size scale-free.
    simd::scale(1.0 / total, gl);
    simd::scale(1.0 / total, gr);
    bool accepted = false;
    for (int tries = 0; tries < 40 && !accepted; ++tries) {
      std::vector<double> lp(cur.left_params().begin(), cur.left_params().end());
      std::vector<double> rp(cur.right_params().begin(), cur.right_params().end());
      simd::axpy(eta, gl, lp);
      simd::axpy(eta, gr, rp);
      MonarchMatrix next = MonarchMatrix::from_params(cur.rows(), cur.cols(), cur.block(), std::move(lp), std::move(rp));
      const double qn = monarch_objective(next, xi);
      if (qn >= q) {
        accepted = qn > q;
        cur = std::move(next);
        q = qn;
        eta *= 1.5;
        if (!accepted) break;
      } else {
        eta *= 0.5;
      }
    }
    if (!accepted) break;
  }
  return cur;
}

HmmParams m_step(const HmmParams& prev, const Counts& c, bool update_initial, std::size_t monarch_steps, Rng& rng,
                 std::vector<std::string>& warnings) {
  const std::size_t h = prev.hidden_size();
  const std::size_t v = prev.vocab_size();
  std::vector<double> pi(prev.initial().begin(), prev.initial().end());
  if (update_initial) {
    const double s = simd::sum(c.init);
    if (s > 0.0) {
      pi = c.init;
      simd::scale(1.0 / s, pi);
    }
  }
  StochasticOperator trans = prev.transition();
  if (prev.transition().is_dense()) {
    trans = DenseMatrix(h, h, normalize_rows(c.trans, h, h, rng, "transition", warnings));
  } else {
    trans = monarch_m_step(prev.transition().monarch(), c.trans, monarch_steps);
  }
  DenseMatrix emit(h, v, normalize_rows(c.emit, h, v, rng, "emission", warnings));
  return HmmParams(prev.vocab(), std::move(pi), std::move(trans), std::move(emit), prev.max_len());
}

HmmParams random_init(const Vocabulary& vocab, const EmConfig& cfg, std::size_t max_len) {
  const std::size_t h = cfg.hidden;
  const std::size_t v = vocab.size();
  Rng rng(derive_seed(cfg.init_seed, "init"));
  std::vector<double> pi = random_simplex(h, rng);
  std::vector<double> e;
  for (std::size_t z = 0; z < h; ++z) {
    const auto row = random_simplex(v, rng);
    e.insert(e.end(), row.begin(), row.end());
  }
  StochasticOperator trans = DenseMatrix(h, h, std::vector<double>(h * h, 0.0));
  if (cfg.transition == TransitionKind::dense) {
    std::vector<double> a;
    for (std::size_t z = 0; z < h; ++z) {
      const auto row = random_simplex(h, rng);
      a.insert(a.end(), row.begin(), row.end());
    }
    trans = DenseMatrix(h, h, std::move(a));
  } else {
    const std::size_t b = cfg.monarch_block ? cfg.monarch_block : default_block(h);
    if (h % b != 0) throw DomainError("em: monarch block size must divide H");
    std::vector<double> lp((h / b) * b * b);
    std::vector<double> rp(b * (h / b) * (h / b));
    for (double& x : lp) x = 0.5 * rng.normal();
    for (double& x : rp) x = 0.5 * rng.normal();
    trans = MonarchMatrix::from_params(h, h, b, std::move(lp), std::move(rp));
  }
  return HmmParams(vocab, std::move(pi), std::move(trans), DenseMatrix(h, v, std::move(e)), max_len);
}

}  // namespace

double total_loglik(const std::vector<TokenSequence>& data, const HmmParams& params) {
  std::vector<double> part(parallel_chunks(data.size()), 0.0);
  parallel_for(data.size(), [&](std::size_t b, std::size_t e, std::size_t w) {
    for (std::size_t i = b; i < e; ++i) part[w] += joint_loglik(data[i], params);
  });
  double s = 0.0;
  for (double x : part) s += x;
  return s;
}

EmResult em_train_hmm(const std::vector<TokenSequence>& data, const HmmParams& init, const EmConfig& cfg) {
  if (cfg.iters == 0) throw DomainError("em_train_hmm: iters must be >= 1");
  if (data.empty()) throw DomainError("em_train_hmm: no training sequences");
  std::size_t tokens = 0;
  for (const auto& s : data) {
    for (Token t : s) init.check_token(t);
    tokens += s.size();
  }
  EmResult res{init, {}, {}};
  Rng rng(derive_seed(cfg.init_seed, "em-jitter"));
  for (std::size_t it = 0; it < cfg.iters; ++it) {
    const Counts c = e_step(data, nullptr, res.params);
    if (c.degenerate == data.size()) throw NumericalAbort("em: every sequence has zero likelihood");
    if (c.degenerate > 0)
      res.warnings.push_back("em: " + std::to_string(c.degenerate) + " sequences had zero likelihood at iteration " +
                             std::to_string(it));
    res.loglik.push_back(c.loglik);
    if (it > 0 && cfg.tolerance > 0.0 &&
        (res.loglik[it] - res.loglik[it - 1]) / static_cast<double>(tokens) < cfg.tolerance)
      return res;
    res.params = m_step(res.params, c, true, cfg.monarch_steps, rng, res.warnings);
  }
  res.loglik.push_back(total_loglik(data, res.params));
  return res;
}

EmResult em_train_hmm(const std::vector<TokenSequence>& data, const Vocabulary& vocab, const EmConfig& cfg) {
  if (cfg.hidden == 0) throw DomainError("em_train_hmm: H must be >= 1");
  std::size_t max_len = cfg.max_len;
  if (max_len == 0)
    for (const auto& s : data) max_len = std::max(max_len, s.size());
  return em_train_hmm(data, random_init(vocab, cfg, max_len), cfg);
}

// ---------------------------------------------------------------------------

FinetuneResult joint_finetune(const HmmParams& params, const EncoderHead& head, const DistillDataset& data,
                              const FinetuneConfig& cfg) {
  FinetuneResult res{params, head, {}};
  std::vector<TokenSequence> conts;
  conts.reserve(data.records.size());
  for (const auto& r : data.records) conts.push_back(r.continuation);
  const auto examples = data.hybrid_examples();
  Rng rng(derive_seed(cfg.encoder.seed, "finetune-jitter"));
  std::vector<std::string> warnings;
  for (std::size_t round = 0; round < cfg.rounds; ++round) {
    std::vector<std::vector<double>> priors(data.records.size());
    for (std::size_t i = 0; i < priors.size(); ++i) priors[i] = encode_prior(res.head, data.records[i].features).probs;
    for (std::size_t it = 0; it < cfg.em_iters; ++it) {
      const Counts c = e_step(conts, &priors, res.params);
      res.params = m_step(res.params, c, false, 25, rng, warnings);
    }
    TrainConfig tc = cfg.encoder;
    tc.seed = derive_seed(cfg.encoder.seed, "round" + std::to_string(round));
    const auto prepared = prepare_examples(examples, res.params);
    res.head = train_encoder(res.head, prepared, tc).head;
    res.mean_loglik.push_back(mean_hybrid_loglik(res.head, prepared));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation

Belief Surrogate::prior(const DistillRecord& rec) const {
  if (head) return encode_prior(*head, rec.features);
  return filter_prefix(rec.context, *params);
}

double Surrogate::conditional_loglik(const DistillRecord& rec) const {
  try {
    return continuation_loglik(prior(rec), rec.continuation, *params);
  } catch (const ImpossibleObservation&) {
    return -std::numeric_limits<double>::infinity();
  }
}

const EvalRow& EvalReport::row(const std::string& model) const {
  for (const auto& r : rows)
    if (r.model == model) return r;
  throw DomainError("EvalReport: no row for model '" + model + "'");
}

void EvalReport::write_csv(std::ostream& out) const {
  out << "model,bucket,records,perplexity,clipped\n";
  auto num = [](double x) {
    if (std::isnan(x)) return std::string();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", x);
    return std::string(buf);
  };
  for (const auto& r : rows) {
    out << r.model << ",all," << r.records << ',' << num(r.perplexity) << ',' << r.clipped << '\n';
    for (std::size_t b = 0; b < kLengthBuckets.size(); ++b)
      out << r.model << ',' << kLengthBuckets[b].first << '-' << kLengthBuckets[b].second << ','
          << r.buckets[b].records << ',' << num(r.buckets[b].perplexity) << ",\n";
  }
}

void EvalReport::write_table(std::ostream& out) const {
  std::size_t w = 5;
  for (const auto& r : rows) w = std::max(w, r.model.size());
  out << std::left << std::setw(static_cast<int>(w)) << "model" << std::right << std::setw(10) << "all";
  for (const auto& [lo, hi] : kLengthBuckets)
    out << std::setw(10) << (std::to_string(lo) + "-" + std::to_string(hi));
  out << std::setw(9) << "clipped" << '\n';
  out << std::fixed << std::setprecision(4);
  for (const auto& r : rows) {
    out << std::left << std::setw(static_cast<int>(w)) << r.model << std::right << std::setw(10) << r.perplexity;
    for (const auto& b : r.buckets) {
      if (b.records == 0) out << std::setw(10) << "-";
      else out << std::setw(10) << b.perplexity;
    }
    out << std::setw(9) << r.clipped << '\n';
  }
  out.unsetf(std::ios::floatfield);
}

EvalReport evaluate_perplexity(const std::vector<Surrogate>& models, const DistillDataset& data) {
  if (data.records.empty()) throw DomainError("evaluate_perplexity: empty dataset");
  EvalReport report;
  const std::size_t n = data.records.size();
  for (const auto& model : models) {
    std::vector<double> nll(n);
    std::vector<char> clipped(n, 0);
    parallel_for(n, [&](std::size_t b, std::size_t e, std::size_t) {
      for (std::size_t i = b; i < e; ++i) {
        const auto& rec = data.records[i];
        const double len = static_cast<double>(rec.continuation.size());
        double ll = model.conditional_loglik(rec);
        if (!(ll >= kLogProbFloor * len)) {
          ll = kLogProbFloor * len;
          clipped[i] = 1;
        }
        nll[i] = -ll / len;
      }
    });
    EvalRow row;
    row.model = model.name;
    row.records = n;
    std::array<double, kLengthBuckets.size()> sums{};
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      total += nll[i];
      row.clipped += static_cast<std::size_t>(clipped[i]);
      const std::size_t len = data.records[i].continuation.size();
      for (std::size_t b = 0; b < kLengthBuckets.size(); ++b)
        if (len >= kLengthBuckets[b].first && len <= kLengthBuckets[b].second) {
          sums[b] += nll[i];
          ++row.buckets[b].records;
        }
    }
    row.perplexity = std::exp(total / static_cast<double>(n));
    for (std::size_t b = 0; b < kLengthBuckets.size(); ++b)
      row.buckets[b].perplexity = row.buckets[b].records
                                      ? std::exp(sums[b] / static_cast<double>(row.buckets[b].records))
                                      : std::numeric_limits<double>::quiet_NaN();
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace ltla
