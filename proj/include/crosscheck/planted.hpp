#pragma once

// Planted-fact world: a synthetic stand-in for a model zoo with known
// hallucination rates, plus the exact-key oracle judge that goes with it.
//
// Every query has K true facts. A simulated model writes passages of F
// sentences "Entity <q> has attribute <key>." Each sentence is a fabricated
// key with probability h (the model's hallucination rate), otherwise a true
// fact drawn from the model's favourite subset of the K facts. The subset
// size is round(subset_size * diversity * temperature), so more diverse or
// hotter models contradict themselves more. Fabrications come from a private
// pool per model, or from a shared pool when models declare a common family.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crosscheck/backend.hpp"
#include "crosscheck/config.hpp"

namespace crosscheck::planted {

struct WorldParams {
  std::uint64_t seed = 0;
  int facts_per_query = 10;      // K
  int sentences_per_passage = 5; // F
  int subset_size = 5;           // favourite-subset size at diversity 1, temperature 1
  int fabrication_pool = 20;     // distinct fabricated keys per pool

  // Reads the planted_world config object; `fallback_seed` applies when it has no seed.
  static WorldParams from_json(const nlohmann::json& j, std::uint64_t fallback_seed);
  nlohmann::json to_json() const;
};

struct SimulatedModel {
  ModelId id;
  double hallucination_rate = 0.0;
  double diversity = 1.0;
  std::string family;  // empty: private fabrication pool

  static SimulatedModel from_settings(const ModelId& id, const nlohmann::json& settings);
};

class World {
 public:
  // Throws Error when K < 1 or F < 1.
  World(WorldParams params, std::vector<SimulatedModel> models);

  const WorldParams& params() const noexcept { return params_; }
  const SimulatedModel& model(const ModelId& id) const;
  bool has_model(const ModelId& id) const { return models_.count(id) > 0; }

  std::vector<std::string> true_facts(const QueryId& q) const;
  bool is_true_fact(const std::string& key) const;
  // Favourite subset of model m for query q at the given temperature.
  std::vector<std::string> favourite_subset(const ModelId& m, const QueryId& q, double temperature) const;

  // sample_index -1 is the response; 0.. are evidence passages.
  std::string passage(const ModelId& m, const QueryId& q, int sample_index, const DecodingParams& d) const;

  // Exact-key oracle: "Yes" iff the sentence's key occurs in the evidence.
  std::string judge_support(const std::string& sentence, const std::string& evidence) const;
  // Error analysis by evidence model m. Correct with probability 1 - h_m;
  // fabrications from m's own family pool are never flagged.
  std::string analyze(const ModelId& m, const QueryId& q, const std::string& sentence) const;
  // "No" iff the analysis reports no inaccuracies.
  std::string judge_analysis(const std::string& analysis) const;

  static std::string sentence_for(const QueryId& q, const std::string& key);
  static std::optional<std::string> key_of(const std::string& sentence);
  static std::set<std::string> keys_in(const std::string& text);

 private:
  std::string fabricated_key(const std::string& pool, int i) const;
  std::string pool_of(const SimulatedModel& m) const;

  WorldParams params_;
  std::map<ModelId, SimulatedModel> models_;
};

class PlantedBackend : public Backend {
 public:
  PlantedBackend(BackendDescriptor descriptor, std::shared_ptr<const World> world);

 protected:
  std::string invoke(const BackendRequest& request) override;

 private:
  std::shared_ptr<const World> world_;
};

// World for every mock_planted model in the config (null if there are none).
std::shared_ptr<const World> world_from_config(const RunConfig& config);

// Builds any backend kind; mock_planted ones share `world`.
BackendFactory factory(std::shared_ptr<const World> world);

}  // namespace crosscheck::planted
