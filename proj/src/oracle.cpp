#include "ltla/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ltla/errors.hpp"

namespace ltla::oracle {

namespace {

struct PlainHmm {
  std::size_t h = 0;
  std::size_t v = 0;
  std::vector<double> pi;
  std::vector<std::vector<double>> a;
  std::vector<std::vector<double>> e;
};

PlainHmm plain(const HmmParams& params) {
  PlainHmm m;
  m.h = params.hidden_size();
  m.v = params.vocab_size();
  m.pi.assign(params.initial().begin(), params.initial().end());
  const DenseMatrix a = params.transition().to_dense();
  const DenseMatrix e = params.emission().to_dense();
  m.a.assign(m.h, std::vector<double>(m.h));
  m.e.assign(m.h, std::vector<double>(m.v));
  for (std::size_t i = 0; i < m.h; ++i) {
    for (std::size_t j = 0; j < m.h; ++j) m.a[i][j] = a(i, j);
    for (std::size_t x = 0; x < m.v; ++x) m.e[i][x] = e(i, x);
  }
  return m;
}

// Unnormalized forward vector alpha(z) = p(seq, z_last = z), starting from a
// distribution over the state that emits seq[0].
std::vector<double> forward_from(const PlainHmm& m, std::vector<double> start, std::span<const Token> seq) {
  std::vector<double> alpha = start;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    if (t > 0) {
      std::vector<double> next(m.h, 0.0);
      for (std::size_t i = 0; i < m.h; ++i)
        for (std::size_t j = 0; j < m.h; ++j) next[j] += alpha[i] * m.a[i][j];
      alpha = next;
    }
    for (std::size_t z = 0; z < m.h; ++z) alpha[z] *= m.e[z][seq[t]];
  }
  return alpha;
}

// p(cont | z_last = z) for every z.
std::vector<double> backward(const PlainHmm& m, std::span<const Token> cont) {
  std::vector<double> beta(m.h, 1.0);
  for (std::size_t t = cont.size(); t-- > 0;) {
    std::vector<double> prev(m.h, 0.0);
    for (std::size_t i = 0; i < m.h; ++i)
      for (std::size_t j = 0; j < m.h; ++j) prev[i] += m.a[i][j] * m.e[j][cont[t]] * beta[j];
    beta = prev;
  }
  return beta;
}

double total(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

std::size_t checked_count(std::size_t vocab, std::size_t horizon) {
  std::size_t n = 1;
  for (std::size_t i = 0; i < horizon; ++i) {
    if (vocab != 0 && n > kEnumerationLimit / vocab)
      throw SizeGuardError("oracle: V^n = " + std::to_string(vocab) + "^" + std::to_string(horizon) +
                           " exceeds the enumeration limit of 1e6");
    n *= vocab;
  }
  return n;
}

TokenSequence decode_index(std::size_t index, std::size_t vocab, std::size_t horizon) {
  TokenSequence seq(horizon);
  for (std::size_t i = horizon; i-- > 0;) {
    seq[i] = static_cast<Token>(index % vocab);
    index /= vocab;
  }
  return seq;
}

SequenceModel hmm_model(const HmmParams& params) {
  auto m = std::make_shared<PlainHmm>(plain(params));
  return {m->v, [m](std::span<const Token> ctx, std::span<const Token> cont) {
            std::vector<Token> full(ctx.begin(), ctx.end());
            full.insert(full.end(), cont.begin(), cont.end());
            const double joint = total(forward_from(*m, m->pi, full));
            if (ctx.empty()) return joint;
            const double marg = total(forward_from(*m, m->pi, ctx));
            return marg > 0.0 ? joint / marg : 0.0;
          }};
}

SequenceModel lm_model(const BaseLm& lm) {
  return {lm.vocab_size(), [&lm](std::span<const Token> ctx, std::span<const Token> cont) {
            LmState s = lm.initial_state();
            for (Token t : ctx) s = lm.advance(s, t);
            double p = 1.0;
            for (Token t : cont) {
              p *= lm.next_dist(s)[t];
              if (p == 0.0) return 0.0;
              s = lm.advance(s, t);
            }
            return p;
          }};
}

SequenceModel hybrid_model(const HmmParams& params, const EncoderHead& head, const BaseLm& features_of) {
  auto m = std::make_shared<PlainHmm>(plain(params));
  return {m->v, [m, head, &features_of](std::span<const Token> ctx, std::span<const Token> cont) {
            if (ctx.empty()) return total(forward_from(*m, m->pi, cont));
            LmState s = features_of.initial_state();
            for (Token t : ctx) s = features_of.advance(s, t);
            const std::vector<double> f = features_of.featurize(s);
            // Softmax written out directly.
            std::vector<double> logits = head.logits(f);
            double mx = logits[0];
            for (double l : logits) mx = std::max(mx, l);
            double z = 0.0;
            for (double& l : logits) z += (l = std::exp(l - mx));
            const std::vector<double> beta = backward(*m, cont);
            double p = 0.0;
            for (std::size_t i = 0; i < m->h; ++i) p += logits[i] / z * beta[i];
            return p;
          }};
}

Predicate contains_all(std::vector<TokenSequence> keywords) {
  return [kws = std::move(keywords)](std::span<const Token> ctx, std::span<const Token> cont) {
    std::vector<Token> full(ctx.begin(), ctx.end());
    full.insert(full.end(), cont.begin(), cont.end());
    for (const auto& kw : kws) {
      if (kw.empty()) continue;
      bool found = false;
      for (std::size_t i = 0; i + kw.size() <= full.size() && !found; ++i)
        found = std::equal(kw.begin(), kw.end(), full.begin() + static_cast<std::ptrdiff_t>(i));
      if (!found) return false;
    }
    return true;
  };
}

Predicate token_at(std::size_t k, Token v) {
  return [k, v](std::span<const Token>, std::span<const Token> cont) { return k >= 1 && k <= cont.size() && cont[k - 1] == v; };
}

Predicate eos_within(std::size_t k, Token eos) {
  return [k, eos](std::span<const Token>, std::span<const Token> cont) {
    for (std::size_t i = 0; i < k && i < cont.size(); ++i)
      if (cont[i] == eos) return true;
    return false;
  };
}

Predicate dfa_accepts(const Dfa& dfa) {
  return [dfa](std::span<const Token> ctx, std::span<const Token> cont) {
    DfaState s = dfa.start();
    for (Token t : ctx) s = dfa.step(s, t);
    for (Token t : cont) s = dfa.step(s, t);
    return dfa.accepting(s);
  };
}

double enumerate_event_prob(const SequenceModel& model, std::span<const Token> context, const Predicate& pred,
                            std::size_t horizon) {
  const std::size_t count = checked_count(model.vocab, horizon);
  double p = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const TokenSequence cont = decode_index(i, model.vocab, horizon);
    if (pred(context, cont)) p += model.prob(context, cont);
  }
  return p;
}

double enumerate_classifier_prob(const SequenceModel& model, std::span<const Token> context,
                                 const FactorizedClassifier& clf, std::size_t horizon) {
  const std::size_t count = checked_count(model.vocab, horizon);
  double acc = clf.bias;
  for (Token t : context) acc += clf.weights[t];
  double phi = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const TokenSequence cont = decode_index(i, model.vocab, horizon);
    double w = 0.0;
    for (Token t : cont) w += clf.weights[t];
    phi += model.prob(context, cont) * std::exp(w);
  }
  return sigmoid(acc + std::log(phi));
}

std::vector<double> enumerate_continuation_dist(const SequenceModel& model, std::span<const Token> context,
                                                std::size_t horizon) {
  const std::size_t count = checked_count(model.vocab, horizon);
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = model.prob(context, decode_index(i, model.vocab, horizon));
  return out;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw DomainError("kl_divergence: size mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) return std::numeric_limits<double>::infinity();
    kl += p[i] * std::log(p[i] / q[i]);
  }
  return kl;
}

namespace {

// I(A;B) from a joint table indexed [a * nb + b].
double mutual_information(const std::vector<double>& joint, std::size_t na, std::size_t nb) {
  std::vector<double> pa(na, 0.0);
  std::vector<double> pb(nb, 0.0);
  for (std::size_t a = 0; a < na; ++a)
    for (std::size_t b = 0; b < nb; ++b) {
      pa[a] += joint[a * nb + b];
      pb[b] += joint[a * nb + b];
    }
  double mi = 0.0;
  for (std::size_t a = 0; a < na; ++a)
    for (std::size_t b = 0; b < nb; ++b) {
      const double p = joint[a * nb + b];
      if (p > 0.0) mi += p * std::log(p / (pa[a] * pb[b]));
    }
  return std::max(0.0, mi);
}

}  // namespace

double enumerate_mutual_information(const HmmParams& params, std::size_t t, std::size_t n) {
  if (t < 2 || t > n) throw DomainError("mutual information: need 2 <= t <= n");
  const PlainHmm m = plain(params);
  checked_count(m.v, n);
  const std::size_t na = checked_count(m.v, t - 1);
  const std::size_t nb = checked_count(m.v, n - t + 1);
  std::vector<double> joint(na * nb);
  for (std::size_t a = 0; a < na; ++a) {
    const TokenSequence prefix = decode_index(a, m.v, t - 1);
    const std::vector<double> alpha = forward_from(m, m.pi, prefix);
    for (std::size_t b = 0; b < nb; ++b) {
      const std::vector<double> beta = backward(m, decode_index(b, m.v, n - t + 1));
      double p = 0.0;
      for (std::size_t z = 0; z < m.h; ++z) p += alpha[z] * beta[z];
      joint[a * nb + b] = p;
    }
  }
  return mutual_information(joint, na, nb);
}

double enumerate_mutual_information_hybrid(const HmmParams& params, const EncoderHead& head, const BaseLm& prefix_lm,
                                           std::size_t t, std::size_t n) {
  if (t < 2 || t > n) throw DomainError("mutual information: need 2 <= t <= n");
  const PlainHmm m = plain(params);
  const SequenceModel prefix_model = lm_model(prefix_lm);
  const SequenceModel hybrid = hybrid_model(params, head, prefix_lm);
  checked_count(m.v, n);
  const std::size_t na = checked_count(m.v, t - 1);
  const std::size_t nb = checked_count(m.v, n - t + 1);
  std::vector<double> joint(na * nb);
  for (std::size_t a = 0; a < na; ++a) {
    const TokenSequence prefix = decode_index(a, m.v, t - 1);
    const double pa = prefix_model.prob({}, prefix);
    for (std::size_t b = 0; b < nb; ++b)
      joint[a * nb + b] = pa * hybrid.prob(prefix, decode_index(b, m.v, n - t + 1));
  }
  return mutual_information(joint, na, nb);
}

}  // namespace ltla::oracle
