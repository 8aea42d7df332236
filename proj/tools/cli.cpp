#include "cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ltla/base_lm.hpp"
#include "ltla/decode.hpp"
#include "ltla/distill.hpp"
#include "ltla/errors.hpp"
#include "ltla/oracle.hpp"
#include "ltla/parallel.hpp"
#include "ltla/rng.hpp"
#include "ltla/serialize.hpp"

namespace ltla::cli {

namespace {

/// Bad or missing arguments detected after parsing; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// JSON config files. Top-level scalars apply to the subcommand being run (or
// to the main app for global flags); nested objects keyed by a subcommand
// name apply to that subcommand. Options given on the command line win.

class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(std::vector<std::string> active) : active_(std::move(active)) {}

  std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
    Json j = Json::object();
    for (const CLI::Option* opt : app->get_options()) {
      if (opt->get_lnames().empty() || !opt->get_configurable()) continue;
      const std::string& name = opt->get_lnames().front();
      if (name == "help" || name == "config") continue;
      if (opt->count() > 0) {
        j[name] = opt->results().size() == 1 ? Json(opt->results().front()) : Json(opt->results());
      } else if (default_also && !opt->get_default_str().empty()) {
        j[name] = opt->get_default_str();
      }
    }
    return j.dump(2);
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    Json j;
    try {
      j = Json::parse(input);
    } catch (const Json::parse_error& e) {
      throw CLI::ConversionError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    collect(j, {}, 0, items);
    return items;
  }

 private:
  static std::string normalize(std::string key) {
    for (char& c : key)
      if (c == '_') c = '-';
    return key;
  }

  static std::vector<std::string> inputs_of(const Json& v) {
    std::vector<std::string> out;
    auto one = [](const Json& x) {
      if (x.is_string()) return x.get<std::string>();
      if (x.is_boolean()) return std::string(x.get<bool>() ? "true" : "false");
      return x.dump();
    };
    if (v.is_array()) {
      for (const auto& x : v) out.push_back(one(x));
    } else {
      out.push_back(one(v));
    }
    return out;
  }

  void collect(const Json& obj, std::vector<std::string> parents, std::size_t depth,
               std::vector<CLI::ConfigItem>& items) const {
    for (const auto& [key, value] : obj.items()) {
      if (value.is_object()) {
        // Only sections on the active subcommand path are meaningful.
        if (depth < active_.size() && key == active_[depth]) {
          auto p = parents;
          p.push_back(key);
          collect(value, p, depth + 1, items);
        }
        continue;
      }
      CLI::ConfigItem item;
      item.name = normalize(key);
      item.inputs = inputs_of(value);
      item.parents = parents;
      if (parents.empty() && item.name != "seed" && item.name != "threads") item.parents = active_;
      items.push_back(std::move(item));
    }
  }

  std::vector<std::string> active_;
};

// ---------------------------------------------------------------------------
// Loading helpers

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

TokenSequence parse_tokens(const std::string& text, const Vocabulary& vocab) {
  TokenSequence out;
  for (const auto& w : split_ws(text)) out.push_back(vocab.lookup(w));
  return out;
}

std::string render(const TokenSequence& tokens, const Vocabulary& vocab) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += tokens[i] < vocab.size() ? vocab.names[tokens[i]] : std::to_string(tokens[i]);
  }
  return s;
}

/// One keyword per line, tokens separated by whitespace; '#' starts a comment.
KeywordSpec read_keywords(const std::string& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open constraint file '" + path + "'");
  KeywordSpec spec;
  for (std::string line; std::getline(in, line);) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto words = split_ws(line);
    if (words.empty()) continue;
    TokenSequence kw;
    for (const auto& w : words) kw.push_back(vocab.lookup(w));
    spec.keywords.push_back(std::move(kw));
  }
  return spec;
}

std::shared_ptr<const HmmParams> load_model(const std::string& path) {
  if (path.empty()) throw UsageError("--model is required");
  return std::make_shared<const HmmParams>(hmm_from_json(load_json(path)));
}

std::optional<EncoderHead> load_encoder(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return encoder_from_json(load_json(path));
}

/// A base LM from a file: HMM JSON (has "hidden_size"), TabularLm JSON, or a
/// line-delimited stream of {"dist", "features"} objects (`.jsonl`).
std::shared_ptr<const BaseLm> load_lm(const std::string& path, const std::shared_ptr<const HmmParams>& fallback) {
  if (path.empty()) return std::make_shared<HmmLm>(fallback);
  if (path.size() > 6 && path.substr(path.size() - 6) == ".jsonl") {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open '" + path + "'");
    return std::make_shared<StreamLm>(in);
  }
  const Json j = load_json(path);
  if (j.contains("hidden_size")) return std::make_shared<HmmLm>(std::make_shared<const HmmParams>(hmm_from_json(j)));
  return std::make_shared<TabularLm>(tabular_lm_from_json(j));
}

DistillDataset load_dataset(const std::string& path) {
  if (path.empty()) throw UsageError("--data is required");
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open dataset '" + path + "'");
  return DistillDataset::read_jsonl(in);
}

void check_head(const std::optional<EncoderHead>& head, const HmmParams& params, const BaseLm* lm) {
  if (!head) return;
  if (head->states != params.hidden_size())
    throw UsageError("encoder has " + std::to_string(head->states) + " states but the model has " +
                     std::to_string(params.hidden_size()));
  if (lm && head->features != lm->feature_dim())
    throw UsageError("encoder expects " + std::to_string(head->features) + " features but the LM provides " +
                     std::to_string(lm->feature_dim()));
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw UsageError("cannot write '" + path + "'");
  return f;
}

// ---------------------------------------------------------------------------
// Options per subcommand

struct Globals {
  std::uint64_t seed = 0;
  std::size_t threads = 0;
};

struct SampleDataOpts {
  std::string lm = "planted";
  std::size_t vocab = 4;
  double favor = 0.6;
  double local = 0.2;
  std::size_t n = 1000;
  std::size_t seq_len = kDefaultSeqLen;
  std::string out;
  std::string save_lm;
};

struct TrainHmmOpts {
  std::string data;
  std::size_t hidden = 4;
  std::size_t iters = 50;
  std::string transition = "dense";
  std::size_t block = 0;
  std::size_t vocab = 0;
  std::string eos;
  std::string out;
  std::string loglik_csv;
};

struct TrainEncoderOpts {
  std::string data;
  std::string model;
  std::string variant = "linear";
  std::size_t steps = 2000;
  std::size_t batch = 64;
  double lr = 0.0;
  std::size_t width = 0;
  bool pre = false;
  std::size_t finetune_rounds = 0;
  std::string out;
  std::string model_out;
  std::string loss_csv;
};

struct QueryOpts {
  std::string model;
  std::string encoder;
  std::string lm;
  std::string context;
  std::string constraint;
  std::string classifier;
  std::string token_at;
  std::size_t eos_within = 0;
  std::size_t remaining = 0;
  std::string table_cache;
};

struct GenerateOpts {
  std::string model;
  std::string encoder;
  std::string lm;
  std::string constraint;
  std::string classifier;
  std::string mode = "sample";
  std::size_t beams = 16;
  std::size_t max_len = 32;
  std::size_t samples = 1;
  double temperature = 1.0;
  bool no_mask_eos = false;
  std::string table_cache;
};

struct EvalOpts {
  std::string data;
  std::string model;
  std::string encoder;
  std::string hybrid_model;
  std::string csv;
};

struct BenchOpts {
  BenchConfig cfg;
};

struct OracleOpts {
  std::string model;
  std::string context;
  std::string constraint;
  std::size_t horizon = 3;
  std::size_t t = 2;
  std::size_t n = 4;
};

// ---------------------------------------------------------------------------
// Handlers

int cmd_sample_data(const SampleDataOpts& o, const Globals& g, std::ostream& out) {
  if (o.out.empty()) throw UsageError("--out is required");
  std::shared_ptr<const BaseLm> lm;
  std::string source;
  if (o.lm == "planted") {
    auto t = std::make_shared<TabularLm>(TabularLm::planted(o.vocab, o.favor, o.local));
    if (!o.save_lm.empty()) save_json(o.save_lm, to_json(*t));
    lm = t;
    std::ostringstream s;
    s << "planted(vocab=" << o.vocab << ",favor=" << o.favor << ",local=" << o.local << ")";
    source = s.str();
  } else {
    lm = load_lm(o.lm, nullptr);
    source = o.lm;
  }
  check_lm_conformance(*lm);
  const DistillDataset d = sample_dataset(*lm, o.n, o.seq_len, derive_seed(g.seed, "data"), source);
  auto f = open_out(o.out);
  d.write_jsonl(f);
  out << "wrote " << d.records.size() << " records of length " << d.seq_len << " to " << o.out << '\n';
  return kExitOk;
}

int cmd_train_hmm(const TrainHmmOpts& o, const Globals& g, std::ostream& out) {
  if (o.out.empty()) throw UsageError("--out is required");
  const DistillDataset d = load_dataset(o.data);
  const auto seqs = d.sequences();
  std::size_t v = o.vocab;
  if (v == 0)
    for (const auto& s : seqs)
      for (Token t : s) v = std::max<std::size_t>(v, t + 1);
  Vocabulary vocab = Vocabulary::numeric(v);
  if (!o.eos.empty()) vocab.eos = vocab.lookup(o.eos);
  EmConfig cfg;
  cfg.hidden = o.hidden;
  cfg.iters = o.iters;
  cfg.init_seed = derive_seed(g.seed, "init");
  if (o.transition == "monarch") cfg.transition = TransitionKind::monarch;
  else if (o.transition != "dense") throw UsageError("--transition must be dense or monarch");
  cfg.monarch_block = o.block;
  const EmResult r = em_train_hmm(seqs, vocab, cfg);
  save_json(o.out, to_json(r.params));
  if (!o.loglik_csv.empty()) {
    auto f = open_out(o.loglik_csv);
    f << "iteration,loglik\n" << std::setprecision(17);
    for (std::size_t i = 0; i < r.loglik.size(); ++i) f << i << ',' << r.loglik[i] << '\n';
  }
  for (const auto& w : r.warnings) out << "warning: " << w << '\n';
  double tokens = 0;
  for (const auto& s : seqs) tokens += double(s.size());
  out << std::setprecision(6) << "trained H=" << o.hidden << " (" << o.transition << ") on " << seqs.size()
      << " sequences; loglik/token " << r.loglik.front() / tokens << " -> " << r.loglik.back() / tokens << '\n';
  return kExitOk;
}

int cmd_train_encoder(const TrainEncoderOpts& o, const Globals& g, std::ostream& out) {
  if (o.out.empty()) throw UsageError("--out is required");
  const DistillDataset d = load_dataset(o.data);
  const auto params = load_model(o.model);
  if (d.records.empty()) throw UsageError("dataset is empty");
  const std::size_t f = d.records.front().features.size();
  const EncoderVariant variant = encoder_variant_from_string(o.variant);
  EncoderHead head = variant == EncoderVariant::linear
                         ? EncoderHead::linear(f, params->hidden_size())
                         : EncoderHead::mlp(f, params->hidden_size(), derive_seed(g.seed, "encoder-init"), o.width);
  if (o.pre) head.enable_pre_featurizer();
  TrainConfig cfg = TrainConfig::defaults_for(variant);
  cfg.steps = o.steps;
  cfg.batch_size = o.batch;
  if (o.lr > 0) cfg.learning_rate = o.lr;
  cfg.seed = derive_seed(g.seed, "encoder");
  cfg.validate();

  HmmParams final_params = *params;
  std::vector<std::pair<std::size_t, double>> curve;
  if (o.finetune_rounds == 0) {
    TrainResult r = train_encoder(head, d.hybrid_examples(), *params, cfg);
    head = std::move(r.head);
    curve = std::move(r.loss_curve);
  } else {
    // Stage the encoder on the frozen decoder first, then alternate.
    TrainResult r = train_encoder(head, d.hybrid_examples(), *params, cfg);
    curve = std::move(r.loss_curve);
    FinetuneConfig ft;
    ft.rounds = o.finetune_rounds;
    ft.encoder = cfg;
    FinetuneResult fr = joint_finetune(*params, r.head, d, ft);
    head = std::move(fr.head);
    final_params = std::move(fr.params);
    if (o.model_out.empty()) throw UsageError("--model-out is required with --finetune-rounds");
  }
  save_json(o.out, to_json(head));
  if (!o.model_out.empty()) save_json(o.model_out, to_json(final_params));
  if (!o.loss_csv.empty()) {
    auto fcsv = open_out(o.loss_csv);
    fcsv << "step,mean_nll\n" << std::setprecision(17);
    for (const auto& [step, nll] : curve) fcsv << step << ',' << nll << '\n';
  }
  const auto prepared = prepare_examples(d.hybrid_examples(), final_params);
  out << std::setprecision(6) << "trained " << o.variant << " head; mean hybrid loglik "
      << mean_hybrid_loglik(head, prepared) << '\n';
  return kExitOk;
}

int cmd_query(const QueryOpts& o, std::ostream& out) {
  const auto params = load_model(o.model);
  const auto head = load_encoder(o.encoder);
  const TokenSequence ctx = parse_tokens(o.context, params->vocab());
  if (ctx.size() >= params->max_len()) throw UsageError("context is as long as the model's max_len");
  const std::size_t remaining = o.remaining ? o.remaining : params->max_len() - ctx.size();

  const int kinds = !o.constraint.empty() + !o.classifier.empty() + !o.token_at.empty() + (o.eos_within > 0);
  if (kinds != 1) throw UsageError("give exactly one of --constraint, --classifier, --token-at, --eos-within");
  QuerySpec q;
  if (!o.constraint.empty()) {
    q = QuerySpec::accept(build_keyword_dfa(read_keywords(o.constraint, params->vocab()), params->vocab()));
  } else if (!o.classifier.empty()) {
    q = QuerySpec::attribute(classifier_from_json(load_json(o.classifier)));
    q.classifier.validate(params->vocab_size());
  } else if (!o.token_at.empty()) {
    const auto colon = o.token_at.find(':');
    if (colon == std::string::npos) throw UsageError("--token-at expects K:TOKEN");
    q = QuerySpec::token_at(std::stoul(o.token_at.substr(0, colon)), params->vocab().lookup(o.token_at.substr(colon + 1)));
  } else {
    q = QuerySpec::eos_within(o.eos_within);
  }

  std::optional<Belief> prior;
  if (head) {
    if (ctx.empty()) throw UsageError("a neural encoder needs a nonempty context");
    const auto lm = load_lm(o.lm, params);
    check_head(head, *params, lm.get());
    LmState s = lm->initial_state();
    for (Token t : ctx) s = lm->advance(s, t);
    prior = encode_prior(*head, lm->featurize(s));
  } else if (!ctx.empty()) {
    prior = filter_prefix(ctx, *params);
  }
  std::optional<TableCache> cache;
  if (!o.table_cache.empty()) cache.emplace(o.table_cache);
  const double p = answer_query(q, *params, prior, ctx, remaining, cache ? &*cache : nullptr);
  out << Json{{"prob", p}, {"remaining", remaining}}.dump() << '\n';
  return kExitOk;
}

int cmd_generate(const GenerateOpts& o, const Globals& g, std::ostream& out, std::ostream& err) {
  const auto params = load_model(o.model);
  const auto head = load_encoder(o.encoder);
  const auto lm = load_lm(o.lm, params);
  if (lm->vocab_size() != params->vocab_size()) throw UsageError("LM and model vocabularies differ in size");
  check_head(head, *params, lm.get());
  check_lm_conformance(*lm, 1);

  std::optional<TableCache> disk;
  TableCache mem;
  TableCache& cache = o.table_cache.empty() ? mem : disk.emplace(o.table_cache);
  if (o.constraint.empty() == o.classifier.empty()) throw UsageError("give exactly one of --constraint, --classifier");
  if (o.max_len > params->max_len())
    throw UsageError("--max-len exceeds the model's max_len of " + std::to_string(params->max_len()));
  Constraint c;
  if (!o.constraint.empty()) {
    auto dfa = std::make_shared<const Dfa>(build_keyword_dfa(read_keywords(o.constraint, params->vocab()), params->vocab()));
    c = Constraint::from_dfa(dfa, *params, o.max_len, cache);
  } else {
    c = Constraint::from_classifier(classifier_from_json(load_json(o.classifier)), *params, o.max_len, cache);
  }
  const SurrogateEncoder enc{params, head};
  GenConfig cfg;
  cfg.beams = o.beams;
  cfg.max_len = o.max_len;
  cfg.temperature = o.temperature;
  cfg.mask_eos = !o.no_mask_eos;
  cfg.eos = params->vocab().eos;
  if (o.mode == "beam") cfg.mode = DecodeMode::beam;
  else if (o.mode != "sample") throw UsageError("--mode must be sample or beam");

  auto emit = [&](const Hypothesis& h) {
    out << Json{{"tokens", h.tokens},
                {"text", render(h.tokens, params->vocab())},
                {"lm_loglik", h.lm_loglik},
                {"guided_loglik", h.guided_loglik},
                {"accepted", h.accepted}}
               .dump()
        << '\n';
  };
  if (cfg.mode == DecodeMode::beam) {
    const BeamResult r = beam_generate(*lm, enc, c, cfg);
    if (!r.constraint_met) {
      if (r.best_partial) emit(*r.best_partial);
      err << "constraint not met within " << cfg.max_len << " tokens\n";
      return kExitConstraintNotMet;
    }
    const std::size_t n = std::min(o.samples, r.hypotheses.size());
    for (std::size_t i = 0; i < n; ++i) emit(r.hypotheses[i]);
    return kExitOk;
  }
  const std::uint64_t root = derive_seed(g.seed, "decode");
  for (std::size_t i = 0; i < o.samples; ++i) emit(sample_generate(*lm, enc, c, cfg, derive_seed(root + i, "sample")));
  return kExitOk;
}

int cmd_eval(const EvalOpts& o, std::ostream& out) {
  const DistillDataset d = load_dataset(o.data);
  const auto params = load_model(o.model);
  std::vector<Surrogate> models{{"hmm", params, std::nullopt}};
  if (!o.encoder.empty()) {
    const auto head = load_encoder(o.encoder);
    const auto hybrid_params = o.hybrid_model.empty() ? params : load_model(o.hybrid_model);
    check_head(head, *hybrid_params, nullptr);
    if (!d.records.empty() && head->features != d.records.front().features.size())
      throw UsageError("encoder feature dimension does not match the dataset");
    models.push_back({"hybrid", hybrid_params, head});
  }
  const EvalReport rep = evaluate_perplexity(models, d);
  rep.write_table(out);
  if (!o.csv.empty()) {
    auto f = open_out(o.csv);
    rep.write_csv(f);
  }
  return kExitOk;
}

int cmd_bench(BenchOpts o, const Globals& g, std::ostream& out) {
  o.cfg.seed = derive_seed(g.seed, "bench");
  const BenchReport r = bench_decode(o.cfg);
  r.write_table(out);
  return kExitOk;
}

int cmd_oracle_event(const OracleOpts& o, std::ostream& out) {
  const auto params = load_model(o.model);
  if (o.constraint.empty()) throw UsageError("--constraint is required");
  const TokenSequence ctx = parse_tokens(o.context, params->vocab());
  const Dfa dfa = build_keyword_dfa(read_keywords(o.constraint, params->vocab()), params->vocab());
  const double p = oracle::enumerate_event_prob(oracle::hmm_model(*params), ctx, oracle::dfa_accepts(dfa), o.horizon);
  out << Json{{"prob", p}, {"horizon", o.horizon}}.dump() << '\n';
  return kExitOk;
}

int cmd_oracle_mi(const OracleOpts& o, std::ostream& out) {
  const auto params = load_model(o.model);
  const double mi = oracle::enumerate_mutual_information(*params, o.t, o.n);
  out << Json{{"mi", mi}, {"bound", std::log(double(params->hidden_size()))}}.dump() << '\n';
  return kExitOk;
}

int cmd_oracle_dist(const OracleOpts& o, std::ostream& out) {
  const auto params = load_model(o.model);
  const TokenSequence ctx = parse_tokens(o.context, params->vocab());
  const auto dist = oracle::enumerate_continuation_dist(oracle::hmm_model(*params), ctx, o.horizon);
  for (std::size_t i = 0; i < dist.size(); ++i) {
    const TokenSequence cont = oracle::decode_index(i, params->vocab_size(), o.horizon);
    out << Json{{"tokens", cont}, {"text", render(cont, params->vocab())}, {"prob", dist[i]}}.dump() << '\n';
  }
  return kExitOk;
}

/// Subcommand names in argv, outermost first (used to scope config files).
std::vector<std::string> active_path(int argc, const char* const* argv, const CLI::App& app) {
  std::vector<std::string> path;
  const CLI::App* cur = &app;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a.empty() || a[0] == '-') continue;
    const CLI::App* sub = nullptr;
    for (const CLI::App* s : cur->get_subcommands({}))
      if (s->get_name() == a) sub = s;
    if (sub == nullptr) continue;
    path.push_back(a);
    cur = sub;
  }
  return path;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Lookahead queries, neural-encoded HMM surrogates and constrained decoding", "ltla"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Root seed; components draw from named sub-streams")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker thread cap (1 = deterministic; 0 = all cores)")
      ->capture_default_str();
  app.set_config("--config", "", "JSON config file; command-line flags take precedence");

  SampleDataOpts sd;
  auto* c_sd = app.add_subcommand("sample-data", "Sample context/continuation records from a base LM");
  c_sd->add_option("--lm", sd.lm, "'planted' or a TabularLm/HMM JSON file")->capture_default_str();
  c_sd->add_option("--vocab", sd.vocab, "Vocabulary size of the planted LM")->capture_default_str();
  c_sd->add_option("--favor", sd.favor, "Planted LM: mass on the first token")->capture_default_str();
  c_sd->add_option("--local", sd.local, "Planted LM: mass on the Markov successor")->capture_default_str();
  c_sd->add_option("-n,--n", sd.n, "Number of records")->capture_default_str();
  c_sd->add_option("--seq-len", sd.seq_len, "Sequence length T")->capture_default_str();
  c_sd->add_option("-o,--out", sd.out, "Output JSONL dataset");
  c_sd->add_option("--save-lm", sd.save_lm, "Also write the planted LM as JSON");

  TrainHmmOpts th;
  auto* c_th = app.add_subcommand("train-hmm", "Train a standard HMM by EM on full sequences");
  c_th->add_option("--data", th.data, "Dataset JSONL");
  c_th->add_option("--hidden", th.hidden, "Hidden states H")->capture_default_str();
  c_th->add_option("--iters", th.iters, "EM iterations")->capture_default_str();
  c_th->add_option("--transition", th.transition, "dense or monarch")->capture_default_str();
  c_th->add_option("--block", th.block, "Monarch block size (0 = auto)")->capture_default_str();
  c_th->add_option("--vocab", th.vocab, "Vocabulary size (0 = infer from data)")->capture_default_str();
  c_th->add_option("--eos", th.eos, "Name of the eos token");
  c_th->add_option("-o,--out", th.out, "Output model JSON");
  c_th->add_option("--loglik-csv", th.loglik_csv, "Per-iteration training log-likelihood");

  TrainEncoderOpts te;
  auto* c_te = app.add_subcommand("train-encoder", "Train a neural encoder head against a frozen HMM decoder");
  c_te->add_option("--data", te.data, "Dataset JSONL");
  c_te->add_option("--model", te.model, "HMM decoder JSON");
  c_te->add_option("--variant", te.variant, "linear or mlp")->capture_default_str();
  c_te->add_option("--steps", te.steps, "Optimizer steps")->capture_default_str();
  c_te->add_option("--batch", te.batch, "Batch size")->capture_default_str();
  c_te->add_option("--lr", te.lr, "Learning rate (0 = variant default)")->capture_default_str();
  c_te->add_option("--width", te.width, "mlp hidden width (0 = 4H)")->capture_default_str();
  c_te->add_flag("--pre", te.pre, "Add a trainable linear pre-featurizer");
  c_te->add_option("--finetune-rounds", te.finetune_rounds, "Joint fine-tuning rounds after training")
      ->capture_default_str();
  c_te->add_option("-o,--out", te.out, "Output encoder JSON");
  c_te->add_option("--model-out", te.model_out, "Output decoder JSON after fine-tuning");
  c_te->add_option("--loss-csv", te.loss_csv, "Loss curve CSV (step, mean_nll)");

  QueryOpts qo;
  auto* c_q = app.add_subcommand("query", "Probability of a constraint given a context");
  c_q->add_option("--model", qo.model, "HMM JSON");
  c_q->add_option("--encoder", qo.encoder, "Neural encoder JSON (hybrid prior)");
  c_q->add_option("--lm", qo.lm, "Base LM supplying encoder features");
  c_q->add_option("--context", qo.context, "Context tokens, whitespace separated");
  c_q->add_option("--constraint", qo.constraint, "Keyword file (one keyword per line)");
  c_q->add_option("--classifier", qo.classifier, "Factorized classifier JSON");
  c_q->add_option("--token-at", qo.token_at, "K:TOKEN, the K-th next token equals TOKEN");
  c_q->add_option("--eos-within", qo.eos_within, "eos within the next K tokens");
  c_q->add_option("--remaining", qo.remaining, "Continuation length (0 = up to max_len)");
  c_q->add_option("--table-cache", qo.table_cache, "Directory for persisted lookahead tables");

  GenerateOpts go;
  auto* c_g = app.add_subcommand("generate", "Constrained generation");
  c_g->add_option("--model", go.model, "HMM surrogate JSON");
  c_g->add_option("--encoder", go.encoder, "Neural encoder JSON");
  c_g->add_option("--lm", go.lm, "Base LM (HMM/TabularLm JSON or .jsonl stream; default: the model)");
  c_g->add_option("--constraint", go.constraint, "Keyword file (one keyword per line)");
  c_g->add_option("--classifier", go.classifier, "Factorized classifier JSON");
  c_g->add_option("--mode", go.mode, "sample or beam")->capture_default_str();
  c_g->add_option("--beams", go.beams, "Beam width")->capture_default_str();
  c_g->add_option("--max-len", go.max_len, "Maximum tokens")->capture_default_str();
  c_g->add_option("--samples", go.samples, "Samples to draw (beam: hypotheses to print)")->capture_default_str();
  c_g->add_option("--temperature", go.temperature, "Base-LM temperature")->capture_default_str();
  c_g->add_flag("--no-mask-eos", go.no_mask_eos, "Allow eos before the constraint is met");
  c_g->add_option("--table-cache", go.table_cache, "Directory for persisted lookahead tables");

  EvalOpts eo;
  auto* c_e = app.add_subcommand("eval", "Stratified conditional perplexity");
  c_e->add_option("--data", eo.data, "Dataset JSONL");
  c_e->add_option("--model", eo.model, "Standard HMM JSON");
  c_e->add_option("--encoder", eo.encoder, "Neural encoder JSON for a hybrid row");
  c_e->add_option("--hybrid-model", eo.hybrid_model, "Decoder for the hybrid row (default: --model)");
  c_e->add_option("--csv", eo.csv, "Write the report as CSV");

  BenchOpts bo;
  auto* c_b = app.add_subcommand("bench", "Per-step decode cost: precomputed tables vs per-prefix rebuild");
  c_b->add_option("--vocab", bo.cfg.vocab, "Vocabulary size")->capture_default_str();
  c_b->add_option("--hidden", bo.cfg.hidden, "Hidden states")->capture_default_str();
  c_b->add_option("--max-len", bo.cfg.max_len, "Decode length")->capture_default_str();
  c_b->add_option("--decodes", bo.cfg.decodes, "Timed decodes")->capture_default_str();
  c_b->add_option("--warmup", bo.cfg.warmup, "Untimed warmup decodes")->capture_default_str();

  OracleOpts oo;
  auto* c_o = app.add_subcommand("oracle", "Brute-force enumeration oracles");
  c_o->require_subcommand(1);
  auto* c_oe = c_o->add_subcommand("event", "Enumerated constraint probability");
  c_oe->add_option("--model", oo.model, "HMM JSON");
  c_oe->add_option("--context", oo.context, "Context tokens");
  c_oe->add_option("--constraint", oo.constraint, "Keyword file");
  c_oe->add_option("--horizon", oo.horizon, "Continuation length")->capture_default_str();
  auto* c_om = c_o->add_subcommand("mi", "Exact I(X_<t; X_>=t) and the log H bound");
  c_om->add_option("--model", oo.model, "HMM JSON");
  c_om->add_option("--t", oo.t, "Split position")->capture_default_str();
  c_om->add_option("--n", oo.n, "Sequence length")->capture_default_str();
  auto* c_od = c_o->add_subcommand("dist", "Enumerated continuation distribution");
  c_od->add_option("--model", oo.model, "HMM JSON");
  c_od->add_option("--context", oo.context, "Context tokens");
  c_od->add_option("--horizon", oo.horizon, "Continuation length")->capture_default_str();

  app.config_formatter(std::make_shared<JsonConfig>(active_path(argc, argv, app)));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  set_max_threads(g.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : g.threads);
  try {
    if (c_sd->parsed()) return cmd_sample_data(sd, g, out);
    if (c_th->parsed()) return cmd_train_hmm(th, g, out);
    if (c_te->parsed()) return cmd_train_encoder(te, g, out);
    if (c_q->parsed()) return cmd_query(qo, out);
    if (c_g->parsed()) return cmd_generate(go, g, out, err);
    if (c_e->parsed()) return cmd_eval(eo, out);
    if (c_b->parsed()) return cmd_bench(bo, g, out);
    if (c_oe->parsed()) return cmd_oracle_event(oo, out);
    if (c_om->parsed()) return cmd_oracle_mi(oo, out);
    if (c_od->parsed()) return cmd_oracle_dist(oo, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UnsatisfiableAtStep& e) {
    err << "error: " << e.what() << '\n';
    return kExitConstraintNotMet;
  } catch (const NumericalAbort& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumericalAbort;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace ltla::cli
