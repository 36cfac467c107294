#include "crosscheck/planted.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "crosscheck/hash.hpp"

namespace crosscheck::planted {
namespace {

// Own helpers instead of <random> distributions, whose output is
// implementation-defined: worlds must be identical on every platform.
std::mt19937_64 stream(std::uint64_t seed, std::initializer_list<std::string_view> parts) {
  std::uint64_t h = fnv1a64(std::to_string(seed));
  for (auto p : parts) {
    h = fnv1a64("|", h);
    h = fnv1a64(p, h);
  }
  return std::mt19937_64(h);
}

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::size_t below(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(rng, i)]);
}

std::string hex8(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%08llx", static_cast<unsigned long long>(v & 0xffffffffULL));
  return buf;
}

constexpr std::string_view kNoErrors = "No inaccuracies found.";

}  // namespace

WorldParams WorldParams::from_json(const nlohmann::json& j, std::uint64_t fallback_seed) {
  WorldParams p;
  p.seed = j.contains("seed") ? j.at("seed").get<std::uint64_t>() : fallback_seed;
  p.facts_per_query = j.value("facts_per_query", p.facts_per_query);
  p.sentences_per_passage = j.value("sentences_per_passage", p.sentences_per_passage);
  p.subset_size = j.value("subset_size", p.subset_size);
  p.fabrication_pool = j.value("fabrication_pool", p.fabrication_pool);
  return p;
}

nlohmann::json WorldParams::to_json() const {
  return {{"seed", seed},
          {"facts_per_query", facts_per_query},
          {"sentences_per_passage", sentences_per_passage},
          {"subset_size", subset_size},
          {"fabrication_pool", fabrication_pool}};
}

SimulatedModel SimulatedModel::from_settings(const ModelId& id, const nlohmann::json& s) {
  SimulatedModel m;
  m.id = id;
  m.hallucination_rate = s.value("hallucination_rate", 0.0);
  m.diversity = s.value("diversity", 1.0);
  m.family = s.value("family", std::string{});
  return m;
}

World::World(WorldParams params, std::vector<SimulatedModel> models) : params_(params) {
  if (params_.facts_per_query < 1) throw Error("planted world needs at least one true fact per query (K >= 1)");
  if (params_.sentences_per_passage < 1) throw Error("planted world needs sentences_per_passage >= 1");
  if (params_.subset_size < 1) throw Error("planted world needs subset_size >= 1");
  if (params_.fabrication_pool < 1) throw Error("planted world needs fabrication_pool >= 1");
  for (auto& m : models) {
    if (m.hallucination_rate < 0.0 || m.hallucination_rate > 1.0)
      throw Error("planted model '" + m.id + "': hallucination_rate outside [0, 1]");
    if (!(m.diversity > 0.0)) throw Error("planted model '" + m.id + "': diversity must be > 0");
    models_.emplace(m.id, std::move(m));
  }
}

const SimulatedModel& World::model(const ModelId& id) const {
  auto it = models_.find(id);
  if (it == models_.end()) throw Error("model '" + id + "' is not part of the planted world");
  return it->second;
}

std::vector<std::string> World::true_facts(const QueryId&) const {
  std::vector<std::string> out;
  for (int k = 0; k < params_.facts_per_query; ++k) out.push_back("t" + std::to_string(k));
  return out;
}

bool World::is_true_fact(const std::string& key) const {
  if (key.size() < 2 || key[0] != 't') return false;
  if (!std::all_of(key.begin() + 1, key.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
    return false;
  return std::stol(key.substr(1)) < params_.facts_per_query;
}

std::vector<std::string> World::favourite_subset(const ModelId& m, const QueryId& q, double temperature) const {
  const auto& sim = model(m);
  auto facts = true_facts(q);
  auto rng = stream(params_.seed, {"favourite", m, q});
  shuffle(facts, rng);
  const double raw = std::round(params_.subset_size * sim.diversity * temperature);
  const auto s = static_cast<std::size_t>(std::clamp(raw, 1.0, static_cast<double>(facts.size())));
  facts.resize(s);
  return facts;
}

std::string World::pool_of(const SimulatedModel& m) const {
  return m.family.empty() ? "model:" + m.id : "family:" + m.family;
}

std::string World::fabricated_key(const std::string& pool, int i) const {
  return "f" + hex8(fnv1a64(pool)) + "n" + std::to_string(i);
}

std::string World::sentence_for(const QueryId& q, const std::string& key) {
  return "Entity " + q + " has attribute " + key + ".";
}

std::optional<std::string> World::key_of(const std::string& sentence) {
  static constexpr std::string_view marker = " has attribute ";
  const auto at = sentence.find(marker);
  if (at == std::string::npos) return std::nullopt;
  std::size_t b = at + marker.size();
  std::size_t e = b;
  while (e < sentence.size() && std::isalnum(static_cast<unsigned char>(sentence[e]))) ++e;
  if (e == b) return std::nullopt;
  return sentence.substr(b, e - b);
}

std::set<std::string> World::keys_in(const std::string& text) {
  std::set<std::string> keys;
  static constexpr std::string_view marker = " has attribute ";
  std::size_t at = 0;
  while ((at = text.find(marker, at)) != std::string::npos) {
    std::size_t b = at + marker.size();
    std::size_t e = b;
    while (e < text.size() && std::isalnum(static_cast<unsigned char>(text[e]))) ++e;
    if (e > b) keys.insert(text.substr(b, e - b));
    at = e;
  }
  return keys;
}

std::string World::passage(const ModelId& m, const QueryId& q, int sample_index, const DecodingParams& d) const {
  const auto& sim = model(m);
  auto subset = favourite_subset(m, q, d.temperature);
  auto rng = stream(params_.seed, {"passage", m, q, std::to_string(sample_index)});
  shuffle(subset, rng);
  std::size_t next = 0;
  const std::string pool = pool_of(sim);
  std::string text;
  for (int f = 0; f < params_.sentences_per_passage; ++f) {
    std::string key;
    if (unit(rng) < sim.hallucination_rate) {
      key = fabricated_key(pool, static_cast<int>(below(rng, static_cast<std::size_t>(params_.fabrication_pool))));
    } else {
      if (next == subset.size()) {
        shuffle(subset, rng);
        next = 0;
      }
      key = subset[next++];
    }
    if (!text.empty()) text += ' ';
    text += sentence_for(q, key);
  }
  return text;
}

std::string World::judge_support(const std::string& sentence, const std::string& evidence) const {
  const auto key = key_of(sentence);
  if (!key) return "No";
  return keys_in(evidence).count(*key) ? "Yes" : "No";
}

std::string World::analyze(const ModelId& m, const QueryId& q, const std::string& sentence) const {
  const auto& sim = model(m);
  const auto key = key_of(sentence);
  if (!key) return std::string(kNoErrors);
  auto rng = stream(params_.seed, {"analysis", m, q, sentence});
  const bool correct = unit(rng) >= sim.hallucination_rate;
  if (is_true_fact(*key)) return correct ? std::string(kNoErrors) : "The attribute " + *key + " appears to be inaccurate.";
  if (!sim.family.empty() && key->rfind(fabricated_key(pool_of(sim), 0).substr(0, 9), 0) == 0)
    return std::string(kNoErrors);  // shares the fabrication, so it looks right
  return correct ? "The attribute " + *key + " is not a known fact about Entity " + q + "."
                 : std::string(kNoErrors);
}

std::string World::judge_analysis(const std::string& analysis) const {
  return analysis.rfind("No inaccuracies", 0) == 0 ? "No" : "Yes";
}

PlantedBackend::PlantedBackend(BackendDescriptor descriptor, std::shared_ptr<const World> world)
    : Backend(std::move(descriptor)), world_(std::move(world)) {
  if (!world_) throw Error("planted backend '" + model_id() + "' has no world");
}

std::string PlantedBackend::invoke(const BackendRequest& r) {
  switch (r.kind) {
    case CallKind::generate: return world_->passage(model_id(), r.query_id, r.sample_index, r.decoding);
    case CallKind::judge_support: return world_->judge_support(r.sentence, r.evidence);
    case CallKind::analyze_errors: return world_->analyze(model_id(), r.query_id, r.sentence);
    case CallKind::judge_analysis: return world_->judge_analysis(r.analysis);
  }
  throw Error("unknown call kind");
}

std::shared_ptr<const World> world_from_config(const RunConfig& config) {
  std::vector<SimulatedModel> sims;
  for (const auto& m : config.models)
    if (m.backend.kind == BackendKind::mock_planted) sims.push_back(SimulatedModel::from_settings(m.id, m.backend.settings));
  if (sims.empty()) return nullptr;
  const auto seed = static_cast<std::uint64_t>(config.seed.value_or(0));
  return std::make_shared<const World>(WorldParams::from_json(config.planted_world, seed), std::move(sims));
}

BackendFactory factory(std::shared_ptr<const World> world) {
  return [world](const BackendDescriptor& d) -> std::unique_ptr<Backend> {
    if (d.kind == BackendKind::mock_planted) {
      // Outputs depend on the world too, so it belongs in the fingerprint.
      auto with_world = d;
      if (world) with_world.settings["world"] = world->params().to_json();
      return std::make_unique<PlantedBackend>(std::move(with_world), world);
    }
    return make_backend(d);
  };
}

}  // namespace crosscheck::planted
