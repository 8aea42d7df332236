#include <doctest.h>

#include <filesystem>

#include "fixtures.hpp"
#include "ltla/errors.hpp"
#include "ltla/serialize.hpp"

using namespace ltla;

TEST_SUITE("serialize") {

TEST_CASE("dense HMM round trip is bit exact") {
  Rng rng(101);
  const HmmParams base = fixtures::random_hmm(3, 4, rng);
  Vocabulary vocab{{"a", "b", "c", "<eos>"}, Token{3}};
  const HmmParams p(vocab, std::vector<double>(base.initial().begin(), base.initial().end()), base.transition(),
                    base.emission(), 40);
  const HmmParams back = hmm_from_json(Json::parse(to_json(p).dump()));
  CHECK(back.vocab() == p.vocab());
  CHECK(back.max_len() == 40);
  CHECK(back.transition().dense() == p.transition().dense());
  CHECK(back.emission().dense() == p.emission().dense());
  CHECK(std::vector<double>(back.initial().begin(), back.initial().end()) ==
        std::vector<double>(p.initial().begin(), p.initial().end()));
}

TEST_CASE("Monarch operator round trip") {
  Rng rng(102);
  std::vector<double> lp(2 * 4 * 4);
  std::vector<double> rp(4 * 2 * 3);
  for (double& x : lp) x = rng.normal();
  for (double& x : rp) x = rng.normal();
  const MonarchMatrix m = MonarchMatrix::from_params(8, 12, 4, lp, rp);
  const Json j = to_json(StochasticOperator(m));
  CHECK(j.at("kind") == "monarch");
  CHECK(j.at("perm") == "perfect_shuffle");
  const StochasticOperator back = operator_from_json(Json::parse(j.dump()));
  REQUIRE(back.is_monarch());
  CHECK(back.to_dense() == StochasticOperator(m).to_dense());
  Json bad = j;
  bad["perm"] = "reverse";
  CHECK_THROWS_AS(operator_from_json(bad), ValidationError);
}

TEST_CASE("invalid HMM documents are refused") {
  Json j = to_json(fixtures::canonical());
  j["initial"] = {0.6, 0.6};
  CHECK_THROWS_AS(hmm_from_json(j), ValidationError);
  Json k = to_json(fixtures::canonical());
  k.erase("emission");
  CHECK_THROWS(hmm_from_json(k));
}

TEST_CASE("DFA, LM, encoder and classifier round trips") {
  const Dfa d = build_keyword_dfa({{{0, 1}, {2}}}, Vocabulary::numeric(3));
  const Dfa dback = dfa_from_json(Json::parse(to_json(d).dump()));
  CHECK(dback.hash() == d.hash());

  const TabularLm lm = TabularLm::planted(3, 0.5, 0.2);
  const TabularLm lback = tabular_lm_from_json(Json::parse(to_json(lm).dump()));
  CHECK(lback.tables() == lm.tables());
  CHECK(lback.long_range_switch());
  CHECK(lback.order() == 1);

  EncoderHead head = EncoderHead::mlp(4, 3, 7);
  head.enable_pre_featurizer();
  const EncoderHead hback = encoder_from_json(Json::parse(to_json(head).dump()));
  CHECK(hback.flat() == head.flat());
  CHECK(hback.variant == EncoderVariant::mlp);
  CHECK(hback.has_pre());

  const FactorizedClassifier clf{{0.25, -1.5, 3.0}, 0.125};
  const FactorizedClassifier cback = classifier_from_json(Json::parse(to_json(clf).dump()));
  CHECK(cback.weights == clf.weights);
  CHECK(cback.bias == clf.bias);
}

TEST_CASE("files") {
  const auto path = std::filesystem::temp_directory_path() / "ltla_serialize_test.json";
  save_json(path, to_json(fixtures::canonical()));
  CHECK(hmm_from_json(load_json(path)).emission().dense() == fixtures::canonical().emission().dense());
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_json(path), ValidationError);
}

}  // TEST_SUITE
