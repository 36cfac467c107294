#pragma once

// Config builders for planted-world runs; shared by the bench tests and the
// acceptance binary.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace fixture {

struct SimModel {
  std::string id;
  double rate = 0.0;
  double diversity = 1.0;
  std::string family;
  bool target = false;
  bool explicit_evidence = false;
  bool implicit_evidence = false;
  int samples = 10;
};

struct World {
  std::vector<SimModel> models;
  int queries = 10;
  long long seed = 1;
  int facts = 10;
  int sentences = 5;
  int subset = 5;
  std::string measure = "explicit";
  nlohmann::json extra = nlohmann::json::object();
};

inline nlohmann::json planted_config(const World& w) {
  nlohmann::json models = nlohmann::json::array();
  for (const auto& m : w.models) {
    nlohmann::json backend{{"kind", "mock_planted"}, {"hallucination_rate", m.rate}, {"diversity", m.diversity}};
    if (!m.family.empty()) backend["family"] = m.family;
    models.push_back({{"id", m.id},
                      {"roles",
                       {{"target", m.target},
                        {"evidence_explicit", m.explicit_evidence},
                        {"evidence_implicit", m.implicit_evidence}}},
                      {"samples", m.samples},
                      {"backend", backend}});
  }
  models.push_back({{"id", "oracle"}, {"backend", {{"kind", "mock_planted"}}}});
  nlohmann::json queries = nlohmann::json::array();
  for (int q = 0; q < w.queries; ++q)
    queries.push_back({{"query_id", "q" + std::to_string(q)}, {"content", "Entity q" + std::to_string(q)}});
  nlohmann::json cfg{{"models", models},
                     {"queries", queries},
                     {"judge", "oracle"},
                     {"measure", w.measure},
                     {"seed", w.seed},
                     {"planted_world",
                      {{"seed", w.seed},
                       {"facts_per_query", w.facts},
                       {"sentences_per_passage", w.sentences},
                       {"subset_size", w.subset}}}};
  for (const auto& [k, v] : w.extra.items()) cfg[k] = v;
  return cfg;
}

}  // namespace fixture
