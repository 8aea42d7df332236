#include "ltla/serialize.hpp"

#include <fstream>

#include "ltla/errors.hpp"

namespace ltla {

namespace {

Json matrix_rows(const DenseMatrix& m) {
  Json rows = Json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

DenseMatrix matrix_from_rows(const Json& rows, const char* what) {
  if (!rows.is_array()) throw ValidationError(std::string(what) + ": expected an array of rows");
  if (rows.empty()) return DenseMatrix();
  const std::size_t r = rows.size();
  const std::size_t c = rows.at(0).size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ValidationError(std::string(what) + ": ragged rows");
    for (const auto& x : row) data.push_back(x.get<double>());
  }
  return DenseMatrix(r, c, std::move(data));
}

template <typename T>
T field(const Json& j, const char* key) {
  if (!j.contains(key)) throw ValidationError(std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("bad field '") + key + "': " + e.what());
  }
}

}  // namespace

Json to_json(const StochasticOperator& op) {
  if (op.is_dense()) return {{"kind", "dense"}, {"rows", matrix_rows(op.dense())}};
  const MonarchMatrix& m = op.monarch();
  const std::size_t b = m.block();
  const std::size_t k = m.left_blocks();
  const std::size_t cw = m.right_block_cols();
  Json left = Json::array();
  for (std::size_t a = 0; a < k; ++a) {
    Json block = Json::array();
    for (std::size_t i = 0; i < b; ++i) {
      const auto row = m.left().subspan((a * b + i) * b, b);
      block.push_back(std::vector<double>(row.begin(), row.end()));
    }
    left.push_back(block);
  }
  Json right = Json::array();
  for (std::size_t c = 0; c < b; ++c) {
    Json block = Json::array();
    for (std::size_t r = 0; r < k; ++r) {
      const auto row = m.right().subspan((c * k + r) * cw, cw);
      block.push_back(std::vector<double>(row.begin(), row.end()));
    }
    right.push_back(block);
  }
  return {{"kind", "monarch"},
          {"rows", m.rows()},
          {"cols", m.cols()},
          {"b", b},
          {"left_blocks", left},
          {"perm", "perfect_shuffle"},
          {"right_blocks", right},
          {"row_scale", std::vector<double>(m.row_scale().begin(), m.row_scale().end())}};
}

StochasticOperator operator_from_json(const Json& j) {
  const auto kind = field<std::string>(j, "kind");
  if (kind == "dense") return matrix_from_rows(j.at("rows"), "dense operator");
  if (kind != "monarch") throw ValidationError("unknown operator kind '" + kind + "'");
  if (j.value("perm", std::string("perfect_shuffle")) != "perfect_shuffle")
    throw ValidationError("monarch: only the perfect_shuffle permutation is supported");
  const auto rows = field<std::size_t>(j, "rows");
  const auto cols = field<std::size_t>(j, "cols");
  const auto b = field<std::size_t>(j, "b");
  std::vector<double> left;
  std::vector<double> right;
  for (const auto& block : j.at("left_blocks"))
    for (const auto& row : block)
      for (const auto& x : row) left.push_back(x.get<double>());
  for (const auto& block : j.at("right_blocks"))
    for (const auto& row : block)
      for (const auto& x : row) right.push_back(x.get<double>());
  return MonarchMatrix(rows, cols, b, std::move(left), std::move(right),
                       j.value("row_scale", std::vector<double>{}));
}

Json to_json(const HmmParams& p) {
  Json eos = nullptr;
  if (p.vocab().eos) eos = p.vocab().names.at(*p.vocab().eos);
  return {{"hidden_size", p.hidden_size()},
          {"vocab", p.vocab().names},
          {"eos", eos},
          {"initial", std::vector<double>(p.initial().begin(), p.initial().end())},
          {"transition", to_json(p.transition())},
          {"emission", to_json(p.emission())},
          {"max_len", p.max_len()}};
}

HmmParams hmm_from_json(const Json& j) {
  Vocabulary vocab;
  const Json& v = j.at("vocab");
  if (v.is_number_unsigned()) vocab = Vocabulary::numeric(v.get<std::size_t>());
  else vocab.names = v.get<std::vector<std::string>>();
  if (j.contains("eos") && !j.at("eos").is_null()) vocab.eos = vocab.lookup(j.at("eos").get<std::string>());
  auto initial = field<std::vector<double>>(j, "initial");
  if (j.contains("hidden_size") && field<std::size_t>(j, "hidden_size") != initial.size())
    throw ValidationError("hmm: hidden_size does not match the initial distribution");
  return HmmParams(std::move(vocab), std::move(initial), operator_from_json(j.at("transition")),
                   operator_from_json(j.at("emission")), j.value("max_len", std::size_t{1024}));
}

Json to_json(const Dfa& dfa) {
  Json delta = Json::array();
  for (DfaState s = 0; s < dfa.num_states(); ++s) {
    std::vector<DfaState> row(dfa.alphabet_size());
    for (std::size_t v = 0; v < row.size(); ++v) row[v] = dfa.step(s, static_cast<Token>(v));
    delta.push_back(row);
  }
  std::vector<DfaState> accept;
  for (DfaState s = 0; s < dfa.num_states(); ++s)
    if (dfa.accepting(s)) accept.push_back(s);
  return {{"num_states", dfa.num_states()},
          {"alphabet", dfa.alphabet_size()},
          {"start", dfa.start()},
          {"accept", accept},
          {"delta", delta}};
}

Dfa dfa_from_json(const Json& j) {
  const auto n = field<std::size_t>(j, "num_states");
  const auto rows = field<std::vector<std::vector<DfaState>>>(j, "delta");
  if (rows.size() != n) throw ValidationError("dfa: delta must have num_states rows");
  const std::size_t alphabet = j.value("alphabet", rows.empty() ? std::size_t{0} : rows[0].size());
  std::vector<DfaState> delta;
  for (const auto& r : rows) {
    if (r.size() != alphabet) throw ValidationError("dfa: delta rows must have one entry per token");
    delta.insert(delta.end(), r.begin(), r.end());
  }
  std::vector<bool> accept(n, false);
  for (auto s : field<std::vector<DfaState>>(j, "accept")) {
    if (s >= n) throw ValidationError("dfa: accept state out of range");
    accept[s] = true;
  }
  return Dfa(alphabet, std::move(delta), field<DfaState>(j, "start"), std::move(accept));
}

Json to_json(const TabularLm& lm) {
  const std::size_t v = lm.vocab_size();
  Json tables = Json::array();
  for (const auto& t : lm.tables()) {
    Json rows = Json::array();
    for (std::size_t r = 0; r * v < t.size(); ++r)
      rows.push_back(std::vector<double>(t.begin() + static_cast<std::ptrdiff_t>(r * v),
                                         t.begin() + static_cast<std::ptrdiff_t>((r + 1) * v)));
    tables.push_back(rows);
  }
  Json sw = nullptr;
  if (lm.long_range_switch()) sw = {{"trigger", "first_token"}, {"branches", v}};
  return {{"vocab", v},
          {"order", lm.order()},
          {"first", std::vector<double>(lm.first().begin(), lm.first().end())},
          {"tables", tables},
          {"long_range_switch", sw}};
}

TabularLm tabular_lm_from_json(const Json& j) {
  const auto v = field<std::size_t>(j, "vocab");
  const auto order = field<std::size_t>(j, "order");
  std::vector<std::vector<double>> tables;
  for (const auto& branch : j.at("tables")) {
    std::vector<double> flat;
    for (const auto& row : branch)
      for (const auto& x : row) flat.push_back(x.get<double>());
    tables.push_back(std::move(flat));
  }
  const bool sw = j.contains("long_range_switch") && !j.at("long_range_switch").is_null();
  return TabularLm(v, order, field<std::vector<double>>(j, "first"), std::move(tables), sw);
}

Json to_json(const EncoderHead& h) {
  Json j = {{"variant", to_string(h.variant)},
            {"features", h.features},
            {"states", h.states},
            {"pre", h.has_pre() ? matrix_rows(h.pre) : Json(nullptr)},
            {"w1", matrix_rows(h.w1)},
            {"b1", h.b1}};
  if (h.variant == EncoderVariant::mlp) {
    j["w2"] = matrix_rows(h.w2);
    j["b2"] = h.b2;
  }
  return j;
}

EncoderHead encoder_from_json(const Json& j) {
  EncoderHead h;
  h.variant = encoder_variant_from_string(field<std::string>(j, "variant"));
  h.features = field<std::size_t>(j, "features");
  h.states = field<std::size_t>(j, "states");
  if (j.contains("pre") && !j.at("pre").is_null()) h.pre = matrix_from_rows(j.at("pre"), "encoder pre");
  h.w1 = matrix_from_rows(j.at("w1"), "encoder w1");
  h.b1 = field<std::vector<double>>(j, "b1");
  if (h.variant == EncoderVariant::mlp) {
    h.w2 = matrix_from_rows(j.at("w2"), "encoder w2");
    h.b2 = field<std::vector<double>>(j, "b2");
  }
  h.validate();
  return h;
}

Json to_json(const FactorizedClassifier& clf) { return {{"weights", clf.weights}, {"bias", clf.bias}}; }

FactorizedClassifier classifier_from_json(const Json& j) {
  FactorizedClassifier c;
  c.weights = field<std::vector<double>>(j, "weights");
  c.bias = j.value("bias", 0.0);
  return c;
}

Json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ValidationError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void save_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  out << j.dump(1) << '\n';
}

}  // namespace ltla
