#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "crosscheck/scoring.hpp"
#include "doctest.h"
#include "support/scoring_oracle.hpp"

using namespace crosscheck;
using namespace crosscheck::scoring;

namespace {

constexpr Verdict S = Verdict::supported;
constexpr Verdict H = Verdict::hallucinatory;
constexpr Verdict U = Verdict::unparseable;

WeightVector weights(std::map<ModelId, double> e) {
  WeightVector w;
  w.entries = std::move(e);
  return w;
}

}  // namespace

TEST_SUITE("scoring") {
  TEST_CASE("selfcheck examples") {
    ExplicitMatrix m;
    SampleVerdicts v(20, S);
    std::fill(v.begin(), v.begin() + 5, H);
    m.queries["q"] = {{{"t", v}}};
    auto card = selfcheck_score("t", m, 20);
    CHECK(card.sentence_scores.at({"q", 0}) == 0.25);
    CHECK(card.measure == Measure::selfcheck);

    ExplicitMatrix zero;
    zero.queries["a"] = {{{"t", {S, S}}}, {{"t", {S, S}}}};
    zero.queries["b"] = {{{"t", {S, S}}}};
    CHECK(selfcheck_score("t", zero, 2).corpus_score == 0.0);

    ExplicitMatrix two;
    two.queries["q"] = {{{"t", {H, S, S, S}}}, {{"t", {H, H, H, S}}}};
    auto c2 = selfcheck_score("t", two, 4);
    CHECK(c2.query_scores.at("q") == 0.5);
    CHECK(c2.corpus_score == 0.5);
  }

  TEST_CASE("selfcheck reports gaps") {
    ExplicitMatrix m;
    m.queries["q"] = {{{"t", {S, S}}}, {{"t", {S}}}, {{"other", {S, S}}}};
    try {
      selfcheck_score("t", m, 2);
      FAIL("expected IncompleteError");
    } catch (const IncompleteError& e) {
      CHECK(e.gaps().size() == 2);
      CHECK(e.gaps()[0].find("sentence 1") != std::string::npos);
    }
  }

  TEST_CASE("explicit examples") {
    ExplicitMatrix m;
    m.queries["q"] = {{{"a", {S, H}}, {"b", {H, H}}}};
    auto card = crosscheck_explicit_score("t", m, weights({{"a", 0.7}, {"b", 0.3}}), {{"a", 2}, {"b", 2}});
    CHECK(card.sentence_scores.at({"q", 0}) == doctest::Approx(0.65).epsilon(1e-12));

    ExplicitMatrix all;
    all.queries["q"] = {{{"a", {H, H, H}}, {"b", {H}}}};
    CHECK(crosscheck_explicit_score("t", all, weights({{"a", 0.37}, {"b", 0.63}}), {{"a", 3}, {"b", 1}})
              .corpus_score == 1.0);
  }

  TEST_CASE("explicit rejects weight/model mismatches") {
    ExplicitMatrix m;
    m.queries["q"] = {{{"a", {S, H}}}};
    CHECK_THROWS_AS(crosscheck_explicit_score("t", m, weights({{"a", 0.5}, {"b", 0.5}}), {{"a", 2}}),
                    Error);
    CHECK_THROWS_AS(crosscheck_explicit_score("t", m, weights({{"a", 1.0}}), {{"a", 0}}), Error);
    CHECK_THROWS_AS(crosscheck_explicit_score("t", m, weights({{"a", 1.0}}), {{"a", 3}}),
                    IncompleteError);
    // a column missing for a declared evidence model
    CHECK_THROWS_AS(
        crosscheck_explicit_score("t", m, weights({{"a", 0.5}, {"b", 0.5}}), {{"a", 2}, {"b", 2}}),
        IncompleteError);
  }

  TEST_CASE("implicit examples") {
    ImplicitMatrix m;
    m.queries["q"] = {{{"a", H}, {"b", S}, {"c", S}}};
    auto third = crosscheck_implicit_score("t", m, uniform_weights({"a", "b", "c"}, 0.1));
    CHECK(third.corpus_score == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    ImplicitMatrix zero;
    zero.queries["q"] = {{{"a", S}, {"b", S}}};
    CHECK(crosscheck_implicit_score("t", zero, uniform_weights({"a", "b"}, 0.1)).corpus_score == 0.0);

    const auto w = compute_weights({{"a", 0.2}, {"b", 0.4}}, 0.1);
    ImplicitMatrix m2;
    m2.queries["q"] = {{{"a", S}, {"b", H}}};
    CHECK(crosscheck_implicit_score("t", m2, w).corpus_score == doctest::Approx(0.1192).epsilon(1e-3));

    ImplicitMatrix missing;
    missing.queries["q"] = {{{"a", S}}};
    CHECK_THROWS_AS(crosscheck_implicit_score("t", missing, w), IncompleteError);
  }

  TEST_CASE("compute_weights examples") {
    auto eq = compute_weights({{"a", 0.3}, {"b", 0.3}, {"c", 0.3}}, 0.1);
    for (const auto& [id, e] : eq.entries) CHECK(e == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    auto w = compute_weights({{"a", 0.2}, {"b", 0.4}}, 0.1);
    CHECK(w.at("a") == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-12));
    CHECK(w.at("b") == doctest::Approx(std::exp(-2.0) / (1.0 + std::exp(-2.0))).epsilon(1e-12));
    CHECK(std::abs(w.at("a") - 0.8808) < 1e-4);
    CHECK(std::abs(w.at("b") - 0.1192) < 1e-4);

    auto hot = compute_weights({{"a", 0.2}, {"b", 0.4}}, 1e6);
    CHECK(std::abs(hot.at("a") - 0.5) < 1e-6);
    CHECK(std::abs(hot.at("b") - 0.5) < 1e-6);

    CHECK_THROWS_AS(compute_weights({{"a", 0.2}}, 0.0), Error);
    CHECK_THROWS_AS(compute_weights({{"a", 0.2}}, -1.0), Error);
    CHECK_THROWS_AS(compute_weights({}, 0.1), Error);
    CHECK_THROWS_AS(compute_weights({{"a", 1.5}}, 0.1), Error);
  }

  TEST_CASE("compute_weights survives tiny temperatures") {
    auto w = compute_weights({{"a", 0.0}, {"b", 1.0}, {"c", 0.5}}, 1e-6);
    CHECK(w.at("a") == 1.0);
    CHECK(w.at("b") == 0.0);
    double total = 0;
    for (const auto& [id, e] : w.entries) total += e;
    CHECK(total == 1.0);
  }

  TEST_CASE("weight properties on random draws") {
    std::mt19937_64 rng(19);
    std::uniform_real_distribution<double> u(0, 1);
    for (int iter = 0; iter < 1000; ++iter) {
      const int k = 1 + static_cast<int>(rng() % 6);
      std::map<ModelId, double> s;
      for (int j = 0; j < k; ++j) s["m" + std::to_string(j)] = u(rng);
      const double t = std::pow(10.0, -2.0 + 3.0 * u(rng));
      auto w = compute_weights(s, t);
      double total = 0;
      for (const auto& [id, e] : w.entries) total += e;
      CHECK(std::abs(total - 1.0) < 1e-9);
      for (const auto& [a, sa] : s)
        for (const auto& [b, sb] : s)
          if (sa < sb) CHECK(w.at(a) >= w.at(b));
    }
  }

  TEST_CASE("per-query weights") {
    auto per = compute_query_weights({{"q1", {{"a", 0.2}, {"b", 0.4}}}, {"q2", {{"a", 0.4}, {"b", 0.2}}}}, 0.1);
    CHECK(per.at("q1").mode == WeightMode::per_query);
    CHECK(per.at("q1").at("a") == doctest::Approx(per.at("q2").at("b")).epsilon(1e-15));

    EvidenceWeights ew(uniform_weights({"a", "b"}, 0.1));
    ew.per_query = per;
    ImplicitMatrix m;
    m.queries["q1"] = {{{"a", H}, {"b", S}}};
    m.queries["q3"] = {{{"a", H}, {"b", S}}};
    auto card = crosscheck_implicit_score("t", m, ew);
    CHECK(card.query_scores.at("q1") == doctest::Approx(0.8808).epsilon(1e-3));
    CHECK(card.query_scores.at("q3") == doctest::Approx(0.5).epsilon(1e-12));
  }

  TEST_CASE("formulas match the brute-force oracle") {
    std::mt19937_64 rng(2024);
    for (int iter = 0; iter < 1500; ++iter) {
      const auto in = oracle::random_instance(rng);
      const auto x = oracle::explicit_matrix(in);
      const auto y = oracle::implicit_matrix(in);
      const auto w = oracle::weight_vector(in);
      const auto n = oracle::sample_counts(in);

      CHECK(std::abs(crosscheck_explicit_score("t", x, w, n).corpus_score - oracle::explicit_score(in)) < 1e-12);
      CHECK(std::abs(crosscheck_implicit_score("t", y, w).corpus_score - oracle::implicit_score(in)) < 1e-12);
      for (int j = 0; j < in.models; ++j) {
        ExplicitMatrix own = x;
        CHECK(std::abs(selfcheck_score(oracle::model_name(j), own, in.samples[j]).corpus_score -
                       oracle::selfcheck(in, j)) < 1e-12);
      }

      std::vector<double> scores;
      std::map<ModelId, double> named;
      for (int j = 0; j < in.models; ++j) {
        scores.push_back(oracle::selfcheck(in, j));
        named[oracle::model_name(j)] = scores.back();
      }
      const double t = 0.05 + static_cast<double>(rng() % 100) / 50.0;
      const auto expect = oracle::softmax_weights(scores, t);
      const auto got = compute_weights(named, t);
      for (int j = 0; j < in.models; ++j)
        CHECK(std::abs(got.at(oracle::model_name(j)) - expect[j]) < 1e-12);
    }
  }

  TEST_CASE("reduction: explicit with evidence {target} equals selfcheck exactly") {
    std::mt19937_64 rng(77);
    for (int iter = 0; iter < 500; ++iter) {
      const auto in = oracle::random_instance(rng);
      const auto x = oracle::explicit_matrix(in);
      const auto self = selfcheck_score("m0", x, in.samples[0]);
      const auto cross = crosscheck_explicit_score("m0", x, weights({{"m0", 1.0}}), {{"m0", in.samples[0]}});
      REQUIRE(self.sentence_scores.size() == cross.sentence_scores.size());
      for (const auto& [k, v] : self.sentence_scores) CHECK(cross.sentence_scores.at(k) == v);
      CHECK(self.corpus_score == cross.corpus_score);
    }
  }

  TEST_CASE("explicit is permutation invariant") {
    std::mt19937_64 rng(5);
    for (int iter = 0; iter < 300; ++iter) {
      auto in = oracle::random_instance(rng);
      const auto base = crosscheck_explicit_score("t", oracle::explicit_matrix(in), oracle::weight_vector(in),
                                                  oracle::sample_counts(in));
      // shuffle samples within each cell
      for (auto& q : in.x)
        for (auto& s : q)
          for (auto& j : s) std::shuffle(j.begin(), j.end(), rng);
      // relabel models so map enumeration order changes
      auto m = oracle::explicit_matrix(in);
      std::vector<int> perm(in.models);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      ExplicitMatrix relabeled;
      WeightVector w;
      std::map<ModelId, int> n;
      for (const auto& [q, sentences] : m.queries)
        for (const auto& cell : sentences) {
          SentenceExplicit out;
          for (int j = 0; j < in.models; ++j)
            out["z" + std::to_string(perm[j])] = cell.at(oracle::model_name(j));
          relabeled.queries[q].push_back(out);
        }
      for (int j = 0; j < in.models; ++j) {
        w.entries["z" + std::to_string(perm[j])] = in.eta[j];
        n["z" + std::to_string(perm[j])] = in.samples[j];
      }
      CHECK(crosscheck_explicit_score("t", relabeled, w, n).corpus_score ==
            doctest::Approx(base.corpus_score).epsilon(1e-12));
    }
  }

  TEST_CASE("scores stay in range") {
    std::mt19937_64 rng(8);
    for (int iter = 0; iter < 300; ++iter) {
      const auto in = oracle::random_instance(rng);
      const auto e = crosscheck_explicit_score("t", oracle::explicit_matrix(in), oracle::weight_vector(in),
                                               oracle::sample_counts(in));
      const auto i = crosscheck_implicit_score("t", oracle::implicit_matrix(in), oracle::weight_vector(in));
      for (const auto* card : {&e, &i}) {
        for (const auto& [k, v] : card->sentence_scores) CHECK((v >= 0.0 && v <= 1.0));
        CHECK((card->corpus_score >= 0.0 && card->corpus_score <= 1.0));
      }
    }
  }

  TEST_CASE("empty responses are excluded from the corpus mean") {
    ExplicitMatrix m;
    m.queries["q1"] = {{{"t", {H, H}}}};
    m.queries["q2"] = {};
    auto card = selfcheck_score("t", m, 2);
    CHECK(card.corpus_score == 1.0);
    CHECK(card.excluded_queries == std::vector<QueryId>{"q2"});
    CHECK(card.query_scores.count("q2") == 0);

    ExplicitMatrix none;
    none.queries["q"] = {};
    CHECK_THROWS_AS(selfcheck_score("t", none, 2), Error);
  }

  TEST_CASE("unparseable verdicts are tallied and follow the policy") {
    ExplicitMatrix m;
    m.queries["q"] = {{{"t", {U, S, H, U}}}};
    auto strict = selfcheck_score("t", m, 4);
    CHECK(strict.corpus_score == 0.75);
    CHECK(strict.unparseable_verdicts == 2);
    CHECK(strict.total_verdicts == 4);
    auto lenient = selfcheck_score("t", m, 4, {UnparseablePolicy::supported});
    CHECK(lenient.corpus_score == 0.25);
  }

  TEST_CASE("refcheck") {
    ReferenceMatrix m;
    m.reference_counts = {{"q1", 1}, {"q2", 2}, {"q3", 2}};
    m.queries["q1"] = {{S}};
    m.queries["q2"] = {{H, H}};
    m.queries["q3"] = {{S, H}};
    auto card = refcheck_score("t", m);
    CHECK(card.query_scores.at("q1") == 0.0);
    CHECK(card.query_scores.at("q2") == 1.0);
    CHECK(card.query_scores.at("q3") == 0.5);
    CHECK(card.measure == Measure::refcheck);

    ReferenceMatrix bad;
    bad.queries["qx"] = {{S}};
    try {
      refcheck_score("t", bad);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("qx") != std::string::npos);
    }
  }

  TEST_CASE("combine_audio_visual") {
    CHECK(combine_audio_visual(0.3520, 0.4960) == 0.3520);
    CHECK(combine_audio_visual(0.4, 0.4) == 0.4);
    CHECK(combine_audio_visual(std::nullopt, 0.25) == 0.25);
    CHECK(combine_audio_visual(0.6, std::nullopt) == 0.6);
    CHECK_THROWS_AS(combine_audio_visual(std::nullopt, std::nullopt), Error);
  }

  TEST_CASE("select_measure") {
    CHECK(select_measure(0.4063) == SelectedMeasure::crosscheck_explicit);
    CHECK(select_measure(0.1716) == SelectedMeasure::crosscheck_implicit);
    CHECK(select_measure(0.30) == SelectedMeasure::crosscheck_explicit);
    CHECK(select_measure(0.5, 0.6) == SelectedMeasure::crosscheck_implicit);
  }

  TEST_CASE("restricted weights renormalise") {
    auto w = compute_weights({{"a", 0.1}, {"b", 0.2}, {"c", 0.3}}, 0.1);
    auto r = w.restricted_to({"a", "c"});
    CHECK(r.entries.size() == 2);
    CHECK(r.at("a") + r.at("c") == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(r.at("a") / r.at("c") == doctest::Approx(w.at("a") / w.at("c")).epsilon(1e-12));
  }
}
