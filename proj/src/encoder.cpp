#include "ltla/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ltla/errors.hpp"
#include "ltla/parallel.hpp"
#include "ltla/rng.hpp"
#include "ltla/simd.hpp"

namespace ltla {

std::string to_string(EncoderVariant v) { return v == EncoderVariant::linear ? "linear" : "mlp"; }

EncoderVariant encoder_variant_from_string(const std::string& s) {
  if (s == "linear") return EncoderVariant::linear;
  if (s == "mlp") return EncoderVariant::mlp;
  throw DomainError("unknown encoder variant '" + s + "'");
}

EncoderHead EncoderHead::linear(std::size_t features, std::size_t states) {
  EncoderHead h;
  h.variant = EncoderVariant::linear;
  h.features = features;
  h.states = states;
  h.w1 = DenseMatrix(states, features);
  h.b1.assign(states, 0.0);
  return h;
}

EncoderHead EncoderHead::mlp(std::size_t features, std::size_t states, std::uint64_t seed, std::size_t width) {
  if (width == 0) width = 4 * states;
  EncoderHead h;
  h.variant = EncoderVariant::mlp;
  h.features = features;
  h.states = states;
  Rng rng(seed);
  h.w1 = DenseMatrix(width, features);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(features, 1)));
  for (double& w : h.w1.data()) w = rng.normal() * s1;
  h.b1.assign(width, 0.0);
  h.w2 = DenseMatrix(states, width);
  const double s2 = 1.0 / std::sqrt(static_cast<double>(width));
  for (double& w : h.w2.data()) w = rng.normal() * s2;
  h.b2.assign(states, 0.0);
  return h;
}

void EncoderHead::enable_pre_featurizer() {
  if (!has_pre()) pre = DenseMatrix::identity(features);
}

void EncoderHead::validate() const {
  if (features == 0 || states == 0) throw ValidationError("EncoderHead: empty shape");
  if (has_pre() && (pre.rows() != features || pre.cols() != features))
    throw ValidationError("EncoderHead: pre-featurizer must be F x F");
  if (w1.cols() != features || b1.size() != w1.rows()) throw ValidationError("EncoderHead: W1/b1 shape mismatch");
  if (variant == EncoderVariant::linear) {
    if (w1.rows() != states) throw ValidationError("EncoderHead: linear W1 must be H x F");
  } else {
    if (w2.rows() != states || w2.cols() != w1.rows() || b2.size() != states)
      throw ValidationError("EncoderHead: W2/b2 shape mismatch");
  }
  for (double v : flat())
    if (!std::isfinite(v)) throw ValidationError("EncoderHead: non-finite weight");
}

std::size_t EncoderHead::param_count() const {
  return pre.data().size() + w1.data().size() + b1.size() + w2.data().size() + b2.size();
}

std::vector<double> EncoderHead::flat() const {
  std::vector<double> out;
  out.reserve(param_count());
  out.insert(out.end(), pre.data().begin(), pre.data().end());
  out.insert(out.end(), w1.data().begin(), w1.data().end());
  out.insert(out.end(), b1.begin(), b1.end());
  out.insert(out.end(), w2.data().begin(), w2.data().end());
  out.insert(out.end(), b2.begin(), b2.end());
  return out;
}

void EncoderHead::set_flat(std::span<const double> values) {
  if (values.size() != param_count()) throw DomainError("EncoderHead::set_flat: size mismatch");
  auto it = values.begin();
  auto take = [&it](std::span<double> dst) {
    std::copy(it, it + static_cast<std::ptrdiff_t>(dst.size()), dst.begin());
    it += static_cast<std::ptrdiff_t>(dst.size());
  };
  take(pre.data());
  take(w1.data());
  take(b1);
  take(w2.data());
  take(b2);
}

EncoderHead EncoderHead::zeros_like() const {
  EncoderHead z = *this;
  const std::vector<double> zeros(param_count(), 0.0);
  z.set_flat(zeros);
  return z;
}

namespace {

struct ForwardCache {
  std::vector<double> input;   // features after the pre-featurizer
  std::vector<double> hidden;  // tanh activations (mlp)
  std::vector<double> logits;
};

ForwardCache run_head(const EncoderHead& head, std::span<const double> features) {
  if (features.size() != head.features)
    throw DomainError("encoder: feature dimension " + std::to_string(features.size()) + " != " +
                      std::to_string(head.features));
  ForwardCache c;
  c.input = head.has_pre() ? head.pre.right_mul(features) : std::vector<double>(features.begin(), features.end());
  std::vector<double> a = head.w1.right_mul(c.input);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += head.b1[i];
  if (head.variant == EncoderVariant::linear) {
    c.logits = std::move(a);
    return c;
  }
  c.hidden.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) c.hidden[i] = std::tanh(a[i]);
  c.logits = head.w2.right_mul(c.hidden);
  for (std::size_t i = 0; i < c.logits.size(); ++i) c.logits[i] += head.b2[i];
  return c;
}

std::vector<double> softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] = std::exp(logits[i] - mx));
  for (double& v : p) v /= s;
  return p;
}

// Accumulates d(loglik)/d(params) into grad for one example; returns loglik.
double accumulate_example(const EncoderHead& head, const PreparedExample& ex, EncoderHead& grad) {
  const ForwardCache c = run_head(head, ex.features);
  const std::vector<double> prior = softmax(c.logits);
  std::vector<double> post(prior.size());
  simd::mul(prior, ex.beta, post);
  const double mass = simd::sum(post);
  if (!(mass > 0.0)) return -std::numeric_limits<double>::infinity();
  std::vector<double> g(prior.size());
  for (std::size_t z = 0; z < g.size(); ++z) g[z] = post[z] / mass - prior[z];

  std::vector<double> d_input;
  if (head.variant == EncoderVariant::linear) {
    for (std::size_t z = 0; z < g.size(); ++z) {
      simd::axpy(g[z], c.input, grad.w1.row(z));
      grad.b1[z] += g[z];
    }
    d_input = head.w1.left_mul(g);
  } else {
    for (std::size_t z = 0; z < g.size(); ++z) {
      simd::axpy(g[z], c.hidden, grad.w2.row(z));
      grad.b2[z] += g[z];
    }
    std::vector<double> da = head.w2.left_mul(g);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] *= 1.0 - c.hidden[i] * c.hidden[i];
    for (std::size_t i = 0; i < da.size(); ++i) {
      simd::axpy(da[i], c.input, grad.w1.row(i));
      grad.b1[i] += da[i];
    }
    d_input = head.w1.left_mul(da);
  }
  if (head.has_pre()) {
    for (std::size_t i = 0; i < d_input.size(); ++i) simd::axpy(d_input[i], ex.features, grad.pre.row(i));
  }
  return std::log(mass) + ex.log_scale;
}

double example_loglik(const EncoderHead& head, const PreparedExample& ex) {
  const std::vector<double> prior = softmax(run_head(head, ex.features).logits);
  const double mass = simd::dot(prior, ex.beta);
  if (!(mass > 0.0)) return -std::numeric_limits<double>::infinity();
  return std::log(mass) + ex.log_scale;
}

}  // namespace

std::vector<double> EncoderHead::logits(std::span<const double> f) const { return run_head(*this, f).logits; }

TrainConfig TrainConfig::defaults_for(EncoderVariant v) {
  TrainConfig cfg;
  cfg.learning_rate = v == EncoderVariant::linear ? 1e-2 : 3e-3;
  return cfg;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw DomainError("TrainConfig: learning rate must be positive");
  if (batch_size == 0) throw DomainError("TrainConfig: batch size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw DomainError("TrainConfig: bad moments");
  if (!(clip_norm > 0.0)) throw DomainError("TrainConfig: clip norm must be positive");
}

Belief encode_prior(const EncoderHead& head, std::span<const double> features) {
  return Belief{softmax(run_head(head, features).logits), 0.0};
}

double hybrid_loglik(const EncoderHead& head, std::span<const double> features, std::span<const Token> continuation,
                     const HmmParams& params) {
  if (continuation.empty()) throw DomainError("hybrid_loglik: empty continuation");
  return continuation_loglik(encode_prior(head, features), continuation, params);
}

PreparedExample prepare_example(const HybridExample& ex, const HmmParams& params) {
  if (ex.continuation.empty()) throw DomainError("prepare_example: empty continuation");
  BackwardMessage msg = backward_message(ex.continuation, params);
  return PreparedExample{ex.features, std::move(msg.beta), msg.log_scale, ex.continuation.size()};
}

std::vector<PreparedExample> prepare_examples(std::span<const HybridExample> batch, const HmmParams& params) {
  std::vector<PreparedExample> out(batch.size());
  parallel_for(batch.size(), [&](std::size_t b, std::size_t e, std::size_t) {
    for (std::size_t i = b; i < e; ++i) out[i] = prepare_example(batch[i], params);
  });
  return out;
}

EncoderHead encoder_grad(const EncoderHead& head, std::span<const PreparedExample> batch,
                         std::span<const std::size_t> indices, double* mean_loglik) {
  if (indices.empty()) throw DomainError("encoder_grad: empty batch");
  const std::size_t chunks = parallel_chunks(indices.size());
  std::vector<EncoderHead> partial(chunks, head.zeros_like());
  std::vector<double> ll(chunks, 0.0);
  parallel_for(indices.size(), [&](std::size_t b, std::size_t e, std::size_t w) {
    for (std::size_t i = b; i < e; ++i) ll[w] += accumulate_example(head, batch[indices[i]], partial[w]);
  });
  std::vector<double> total = partial[0].flat();
  for (std::size_t w = 1; w < chunks; ++w) {
    const std::vector<double> f = partial[w].flat();
    simd::axpy(1.0, f, total);
  }
  simd::scale(1.0 / static_cast<double>(indices.size()), total);
  EncoderHead grad = head.zeros_like();
  grad.set_flat(total);
  if (mean_loglik) {
    double s = 0.0;
    for (double v : ll) s += v;
    *mean_loglik = s / static_cast<double>(indices.size());
  }
  return grad;
}

EncoderHead encoder_grad(const EncoderHead& head, std::span<const HybridExample> batch, const HmmParams& params) {
  const std::vector<PreparedExample> prepared = prepare_examples(batch, params);
  std::vector<std::size_t> idx(prepared.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return encoder_grad(head, prepared, idx);
}

double mean_hybrid_loglik(const EncoderHead& head, std::span<const PreparedExample> examples) {
  if (examples.empty()) throw DomainError("mean_hybrid_loglik: no examples");
  std::vector<double> partial(parallel_chunks(examples.size()), 0.0);
  parallel_for(examples.size(), [&](std::size_t b, std::size_t e, std::size_t w) {
    for (std::size_t i = b; i < e; ++i) partial[w] += example_loglik(head, examples[i]);
  });
  double s = 0.0;
  for (double v : partial) s += v;
  return s / static_cast<double>(examples.size());
}

TrainResult train_encoder(const EncoderHead& init, std::span<const PreparedExample> data, const TrainConfig& cfg) {
  cfg.validate();
  init.validate();
  TrainResult result{init, {}};
  if (cfg.steps == 0) return result;
  if (data.empty()) throw DomainError("train_encoder: empty dataset");

  Rng rng(derive_seed(cfg.seed, "encoder-batches"));
  std::vector<double> params = init.flat();
  std::vector<double> m(params.size(), 0.0);
  std::vector<double> v(params.size(), 0.0);
  std::vector<std::size_t> batch(std::min(cfg.batch_size, data.size()));
  EncoderHead head = init;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    for (auto& i : batch) i = rng.below(data.size());
    double mean_ll = 0.0;
    std::vector<double> g = encoder_grad(head, data, batch, &mean_ll).flat();
    if (!std::isfinite(mean_ll))
      throw NumericalAbort("train_encoder: loss is not finite at step " + std::to_string(step));
    result.loss_curve.emplace_back(step, -mean_ll);

    double norm = std::sqrt(simd::dot(g, g));
    if (!std::isfinite(norm)) throw NumericalAbort("train_encoder: gradient is not finite at step " + std::to_string(step));
    if (norm > cfg.clip_norm) simd::scale(cfg.clip_norm / norm, g);

    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < params.size(); ++i) {
      // Ascent on log-likelihood.
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      params[i] += cfg.learning_rate * (mhat / (std::sqrt(vhat) + cfg.epsilon)) -
                   cfg.learning_rate * cfg.weight_decay * params[i];
    }
    head.set_flat(params);
  }
  result.head = std::move(head);
  return result;
}

TrainResult train_encoder(const EncoderHead& init, std::span<const HybridExample> data, const HmmParams& params,
                          const TrainConfig& cfg) {
  const std::vector<PreparedExample> prepared = prepare_examples(data, params);
  return train_encoder(init, prepared, cfg);
}

}  // namespace ltla
