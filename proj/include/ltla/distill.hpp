#pragma once

// Context/continuation datasets sampled from a base LM, Baum-Welch training
// of standard HMMs, and stratified conditional perplexity.

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ltla/base_lm.hpp"
#include "ltla/encoder.hpp"
#include "ltla/hmm.hpp"

namespace ltla {

inline constexpr std::size_t kDefaultSeqLen = 32;

struct DistillRecord {
  TokenSequence context;
  TokenSequence continuation;
  std::vector<double> features;

  TokenSequence full() const;
};

struct DistillDataset {
  std::string source;  // description / hash of the generating LM
  std::size_t seq_len = kDefaultSeqLen;
  std::uint64_t seed = 0;
  std::vector<DistillRecord> records;

  /// |context| + |continuation| = seq_len and 1 <= |context| <= seq_len - 1.
  void validate() const;

  std::vector<TokenSequence> sequences() const;
  std::vector<HybridExample> hybrid_examples() const;

  /// Line-delimited JSON: one {"meta": {...}} line, then one object per record.
  void write_jsonl(std::ostream& out) const;
  static DistillDataset read_jsonl(std::istream& in);
};

/// N sequences of length T; split position uniform on {1, ..., T-1}; features
/// taken from the LM state after the context. Record i draws from its own
/// sub-stream, so the result does not depend on the thread count.
DistillDataset sample_dataset(const BaseLm& lm, std::size_t n, std::size_t seq_len, std::uint64_t seed,
                              std::string source = "");

// ---------------------------------------------------------------------------
// EM

enum class TransitionKind { dense, monarch };

struct EmConfig {
  std::size_t hidden = 4;
  std::size_t iters = 50;
  std::uint64_t init_seed = 0;
  TransitionKind transition = TransitionKind::dense;
  /// Monarch block size; 0 picks the largest b with b*b <= H dividing H.
  std::size_t monarch_block = 0;
  /// Gradient ascent steps per Monarch M-step.
  std::size_t monarch_steps = 25;
  /// Stop early once the per-token log-likelihood gain drops below this.
  double tolerance = 0.0;
  std::size_t max_len = 0;  // 0 = longest training sequence
};

struct EmResult {
  HmmParams params;
  /// Training log-likelihood before each iteration, plus the final value.
  std::vector<double> loglik;
  std::vector<std::string> warnings;
};

/// Baum-Welch. Dense transitions use the closed-form M-step; Monarch
/// transitions maximize the expected complete-data objective by gradient
/// ascent on the log-parameters with backtracking, so it never decreases.
EmResult em_train_hmm(const std::vector<TokenSequence>& data, const Vocabulary& vocab, const EmConfig& cfg);

/// Starts from `init` instead of a random initialization.
EmResult em_train_hmm(const std::vector<TokenSequence>& data, const HmmParams& init, const EmConfig& cfg);

/// Sum of log q(seq) over the data.
double total_loglik(const std::vector<TokenSequence>& data, const HmmParams& params);

// ---------------------------------------------------------------------------
// Joint fine-tuning

struct FinetuneConfig {
  std::size_t rounds = 3;
  std::size_t em_iters = 5;
  TrainConfig encoder;
};

struct FinetuneResult {
  HmmParams params;
  EncoderHead head;
  /// Mean hybrid log-likelihood after each round.
  std::vector<double> mean_loglik;
};

/// Alternates decoder EM with each record's encoder prior held fixed (which
/// cannot decrease the hybrid objective) and encoder ascent with the decoder
/// frozen.
FinetuneResult joint_finetune(const HmmParams& params, const EncoderHead& head, const DistillDataset& data,
                              const FinetuneConfig& cfg);

// ---------------------------------------------------------------------------
// Evaluation

/// A surrogate: an HMM decoder plus either the HMM filter or a neural head as
/// the encoder of the context.
struct Surrogate {
  std::string name;
  std::shared_ptr<const HmmParams> params;
  std::optional<EncoderHead> head;

  /// Belief over z_t at the context boundary.
  Belief prior(const DistillRecord& rec) const;
  /// log q(continuation | context); -infinity for zero mass.
  double conditional_loglik(const DistillRecord& rec) const;
};

inline constexpr std::array<std::pair<std::size_t, std::size_t>, 5> kLengthBuckets{
    {{1, 2}, {3, 4}, {5, 8}, {9, 16}, {17, 31}}};
inline constexpr double kLogProbFloor = -30.0;

struct BucketStat {
  std::size_t records = 0;
  double perplexity = 0.0;  // NaN when empty
};

struct EvalRow {
  std::string model;
  std::size_t records = 0;
  double perplexity = 0.0;
  std::array<BucketStat, kLengthBuckets.size()> buckets{};
  /// Records whose conditional log-likelihood was clipped at the floor.
  std::size_t clipped = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;

  const EvalRow& row(const std::string& model) const;
  void write_csv(std::ostream& out) const;
  void write_table(std::ostream& out) const;
};

/// Per-token conditional perplexity exp(-mean_r log q(cont_r | ctx_r) / |cont_r|),
/// overall and per continuation-length bucket. Log-likelihoods below
/// -30 nats/token are clipped to that floor and counted.
EvalReport evaluate_perplexity(const std::vector<Surrogate>& models, const DistillDataset& data);

}  // namespace ltla
