#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ltla/hmm.hpp"
#include "ltla/matrix.hpp"

namespace ltla {

enum class EncoderVariant { linear, mlp };

std::string to_string(EncoderVariant v);
EncoderVariant encoder_variant_from_string(const std::string& s);

/// Neural prior q_enc(z_t | x_{1:t}): features -> softmax over H latent states.
///
///   linear: logits = W1 f + b1
///   mlp:    logits = W2 tanh(W1 f + b1) + b2
///
/// With `pre` non-empty, features first pass through a trainable F x F map
/// (initialized to the identity), which stands in for finetuning the backbone.
struct EncoderHead {
  EncoderVariant variant = EncoderVariant::linear;
  std::size_t features = 0;
  std::size_t states = 0;
  DenseMatrix pre;
  DenseMatrix w1;
  std::vector<double> b1;
  DenseMatrix w2;
  std::vector<double> b2;

  /// Zero weights (uniform prior).
  static EncoderHead linear(std::size_t features, std::size_t states);
  /// Small random weights; width defaults to 4 * states.
  static EncoderHead mlp(std::size_t features, std::size_t states, std::uint64_t seed, std::size_t width = 0);

  bool has_pre() const noexcept { return pre.rows() != 0; }
  void enable_pre_featurizer();
  std::size_t width() const noexcept { return variant == EncoderVariant::mlp ? w1.rows() : 0; }

  std::vector<double> logits(std::span<const double> features) const;

  /// Flattened parameters: pre, w1, b1, w2, b2.
  std::vector<double> flat() const;
  void set_flat(std::span<const double> values);
  std::size_t param_count() const;
  /// Same shape, all zeros.
  EncoderHead zeros_like() const;

  void validate() const;
};

struct TrainConfig {
  double learning_rate = 1e-2;
  std::size_t batch_size = 64;
  std::size_t steps = 2000;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 5.0;
  double weight_decay = 0.0;

  /// rate 1e-2 for linear heads, 3e-3 for mlp heads.
  static TrainConfig defaults_for(EncoderVariant v);
  void validate() const;
};

/// Softmax of the head's logits; log_norm = 0.
Belief encode_prior(const EncoderHead& head, std::span<const double> features);

/// log sum_z q_enc(z | ctx) q(continuation | z).
double hybrid_loglik(const EncoderHead& head, std::span<const double> features, std::span<const Token> continuation,
                     const HmmParams& params);

struct HybridExample {
  std::vector<double> features;
  TokenSequence continuation;
};

/// A training example with the decoder's backward message precomputed:
/// q(continuation | z) = beta[z] * exp(log_scale).
struct PreparedExample {
  std::vector<double> features;
  std::vector<double> beta;
  double log_scale = 0.0;
  std::size_t length = 0;
};

PreparedExample prepare_example(const HybridExample& ex, const HmmParams& params);
std::vector<PreparedExample> prepare_examples(std::span<const HybridExample> batch, const HmmParams& params);

/// Exact gradient of the mean hybrid log-likelihood w.r.t. the head.
/// d/dlogits log sum_z softmax_z beta_z = posterior(z) - softmax(z).
EncoderHead encoder_grad(const EncoderHead& head, std::span<const HybridExample> batch, const HmmParams& params);
EncoderHead encoder_grad(const EncoderHead& head, std::span<const PreparedExample> batch,
                         std::span<const std::size_t> indices, double* mean_loglik = nullptr);

/// Mean hybrid log-likelihood over prepared examples.
double mean_hybrid_loglik(const EncoderHead& head, std::span<const PreparedExample> examples);

struct TrainResult {
  EncoderHead head;
  /// (step, mean negative log-likelihood of that step's minibatch)
  std::vector<std::pair<std::size_t, double>> loss_curve;
};

/// Adam(W) ascent on the mean hybrid log-likelihood with the decoder frozen.
/// Deterministic for a given seed with --threads 1.
TrainResult train_encoder(const EncoderHead& init, std::span<const PreparedExample> data, const TrainConfig& cfg);
TrainResult train_encoder(const EncoderHead& init, std::span<const HybridExample> data, const HmmParams& params,
                          const TrainConfig& cfg);

}  // namespace ltla
