#pragma once

// JSON documents for models, automata and heads. Doubles are written in
// shortest round-trip form, so save/load preserves values bit-exactly.

#include <filesystem>

#include <json.hpp>

#include "ltla/base_lm.hpp"
#include "ltla/dfa.hpp"
#include "ltla/encoder.hpp"
#include "ltla/hmm.hpp"
#include "ltla/lookahead.hpp"

namespace ltla {

using Json = nlohmann::json;

/// {"hidden_size", "vocab", "eos", "initial", "transition", "emission", "max_len"};
/// operators are {"kind": "dense", "rows": [[...]]} or {"kind": "monarch", "rows",
/// "cols", "b", "left_blocks", "perm": "perfect_shuffle", "right_blocks", "row_scale"}.
Json to_json(const HmmParams& params);
HmmParams hmm_from_json(const Json& j);

Json to_json(const StochasticOperator& op);
StochasticOperator operator_from_json(const Json& j);

/// {"num_states", "alphabet", "start", "accept": [...], "delta": [[...]]}
Json to_json(const Dfa& dfa);
Dfa dfa_from_json(const Json& j);

/// {"vocab", "order", "first", "tables": [per-branch rows], "long_range_switch": null | {...}}
Json to_json(const TabularLm& lm);
TabularLm tabular_lm_from_json(const Json& j);

/// {"variant", "features", "states", "pre", "w1", "b1", "w2", "b2"}
Json to_json(const EncoderHead& head);
EncoderHead encoder_from_json(const Json& j);

/// {"weights": [...], "bias"}
Json to_json(const FactorizedClassifier& clf);
FactorizedClassifier classifier_from_json(const Json& j);

Json load_json(const std::filesystem::path& path);
void save_json(const std::filesystem::path& path, const Json& j);

}  // namespace ltla
