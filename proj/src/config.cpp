#include "crosscheck/config.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include "crosscheck/hash.hpp"

namespace crosscheck {

using nlohmann::json;

std::string_view to_string(BackendKind k) {
  switch (k) {
    case BackendKind::http_chat: return "http_chat";
    case BackendKind::mock_scripted: return "mock_scripted";
    case BackendKind::mock_planted: return "mock_planted";
  }
  return "mock_scripted";
}

std::optional<BackendKind> parse_backend_kind(std::string_view s) {
  if (s == "http_chat") return BackendKind::http_chat;
  if (s == "mock_scripted") return BackendKind::mock_scripted;
  if (s == "mock_planted") return BackendKind::mock_planted;
  return std::nullopt;
}

bool BackendDescriptor::supports(Modality m) const {
  return std::find(modalities.begin(), modalities.end(), m) != modalities.end();
}

std::string BackendDescriptor::fingerprint() const {
  json j;
  j["kind"] = to_string(kind);
  j["settings"] = settings;
  return sha256_hex(canonical_json(j)).substr(0, 16);
}

std::string_view to_string(MeasureSelection m) {
  switch (m) {
    case MeasureSelection::crosscheck_explicit: return "explicit";
    case MeasureSelection::crosscheck_implicit: return "implicit";
    case MeasureSelection::automatic: return "auto";
  }
  return "explicit";
}

std::optional<MeasureSelection> parse_measure_selection(std::string_view s) {
  if (s == "explicit") return MeasureSelection::crosscheck_explicit;
  if (s == "implicit") return MeasureSelection::crosscheck_implicit;
  if (s == "auto") return MeasureSelection::automatic;
  return std::nullopt;
}

std::string_view to_string(ModalityPlan p) {
  return p == ModalityPlan::single ? "single" : "audio_visual";
}

std::optional<ModalityPlan> parse_modality_plan(std::string_view s) {
  if (s == "single") return ModalityPlan::single;
  if (s == "audio_visual") return ModalityPlan::audio_visual;
  return std::nullopt;
}

const ModelConfig* RunConfig::find_model(const ModelId& id) const {
  for (const auto& m : models)
    if (m.id == id) return &m;
  return nullptr;
}

const ModelConfig& RunConfig::model(const ModelId& id) const {
  if (const auto* m = find_model(id)) return *m;
  throw Error("unknown model '" + id + "'");
}

std::vector<ModelId> RunConfig::targets() const {
  std::vector<ModelId> out;
  for (const auto& m : models)
    if (m.roles.target) out.push_back(m.id);
  return out;
}

std::vector<ModelId> RunConfig::explicit_evidence() const {
  std::vector<ModelId> out;
  for (const auto& m : models)
    if (m.roles.evidence_explicit) out.push_back(m.id);
  return out;
}

std::vector<ModelId> RunConfig::implicit_evidence() const {
  std::vector<ModelId> out;
  for (const auto& m : models)
    if (m.roles.evidence_implicit) out.push_back(m.id);
  return out;
}

json to_json(const DecodingParams& d) {
  json j{{"temperature", d.temperature},
         {"top_p", d.top_p},
         {"beam_size", d.beam_size},
         {"max_tokens", d.max_tokens}};
  if (d.seed) j["seed"] = *d.seed;
  return j;
}

json to_json(const Query& q) {
  json j{{"query_id", q.query_id}, {"modality", to_string(q.modality)}, {"content", q.content}};
  if (q.reference_texts) j["reference_texts"] = *q.reference_texts;
  if (!q.item_id.empty()) j["item_id"] = q.item_id;
  if (q.prompt_template) j["prompt_template"] = *q.prompt_template;
  return j;
}

namespace {

// Collects problems instead of throwing so validation reports everything at
// once.
class Checker {
 public:
  std::vector<std::string> errors;

  void fail(std::string msg) { errors.push_back(std::move(msg)); }

  template <typename T>
  std::optional<T> get(const json& obj, const char* key, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key)) return std::nullopt;
    try {
      return obj.at(key).get<T>();
    } catch (const json::exception&) {
      fail(where + ": field '" + key + "' has the wrong type");
      return std::nullopt;
    }
  }
};

bool valid_identifier(const std::string& id) {
  if (id.empty()) return false;
  return std::none_of(id.begin(), id.end(), [](unsigned char c) {
    return c == '|' || std::isspace(c) || std::iscntrl(c);
  });
}

DecodingParams parse_decoding(Checker& ck, const json& j, const DecodingParams& defaults,
                              const std::string& where) {
  DecodingParams d = defaults;
  if (j.is_null()) return d;
  if (!j.is_object()) {
    ck.fail(where + ": decoding must be an object");
    return d;
  }
  if (auto v = ck.get<double>(j, "temperature", where)) d.temperature = *v;
  if (auto v = ck.get<double>(j, "top_p", where)) d.top_p = *v;
  if (auto v = ck.get<int>(j, "beam_size", where)) d.beam_size = *v;
  if (auto v = ck.get<int>(j, "max_tokens", where)) d.max_tokens = *v;
  if (auto v = ck.get<std::int64_t>(j, "seed", where)) d.seed = *v;
  if (!(d.temperature >= 0.0)) ck.fail(where + ": decoding temperature must be >= 0");
  if (!(d.top_p > 0.0 && d.top_p <= 1.0)) ck.fail(where + ": top_p must be in (0, 1]");
  if (d.beam_size < 1) ck.fail(where + ": beam_size must be >= 1");
  if (d.max_tokens < 1) ck.fail(where + ": max_tokens must be >= 1");
  return d;
}

std::vector<Modality> all_modalities() {
  return {Modality::text, Modality::image, Modality::video_visual, Modality::video_audio,
          Modality::audio};
}

BackendDescriptor parse_backend(Checker& ck, const json& j, const ModelId& id,
                                const std::string& where) {
  BackendDescriptor b;
  b.model_id = id;
  if (!j.is_object()) {
    ck.fail(where + ": backend descriptor missing");
    return b;
  }
  const auto kind_name = ck.get<std::string>(j, "kind", where);
  if (!kind_name) {
    ck.fail(where + ": backend kind missing");
  } else if (auto k = parse_backend_kind(*kind_name)) {
    b.kind = *k;
  } else {
    ck.fail(where + ": unknown backend kind '" + *kind_name + "'");
  }

  static const std::set<std::string> kCommon = {"kind", "max_parallel_requests", "retry",
                                                "modalities"};
  for (const auto& [key, value] : j.items())
    if (!kCommon.count(key)) b.settings[key] = value;

  if (auto v = ck.get<int>(j, "max_parallel_requests", where)) b.max_parallel_requests = *v;
  if (b.max_parallel_requests < 1) ck.fail(where + ": max_parallel_requests must be >= 1");

  if (j.contains("retry")) {
    const auto& r = j.at("retry");
    if (auto v = ck.get<int>(r, "max_attempts", where)) b.retry.max_attempts = *v;
    if (auto v = ck.get<long>(r, "initial_backoff_ms", where))
      b.retry.initial_backoff = std::chrono::milliseconds(*v);
    if (auto v = ck.get<double>(r, "backoff_multiplier", where)) b.retry.backoff_multiplier = *v;
    if (auto v = ck.get<long>(r, "timeout_ms", where))
      b.retry.request_timeout = std::chrono::milliseconds(*v);
    if (b.retry.max_attempts < 1) ck.fail(where + ": retry.max_attempts must be >= 1");
  }
  if (b.kind != BackendKind::http_chat) {
    // Simulated backends never wait between attempts.
    b.retry.initial_backoff = std::chrono::milliseconds(0);
  }

  if (j.contains("modalities")) {
    const auto& mods = j.at("modalities");
    if (!mods.is_array()) {
      ck.fail(where + ": modalities must be an array");
    } else {
      for (const auto& m : mods) {
        auto parsed = m.is_string() ? parse_modality(m.get<std::string>()) : std::nullopt;
        if (parsed) {
          b.modalities.push_back(*parsed);
        } else {
          ck.fail(where + ": unknown modality " + m.dump());
        }
      }
    }
  } else if (b.kind == BackendKind::http_chat) {
    b.modalities = {Modality::text};
  } else {
    b.modalities = all_modalities();
  }

  switch (b.kind) {
    case BackendKind::http_chat:
      if (!b.settings.contains("base_url") || !b.settings["base_url"].is_string())
        ck.fail(where + ": http_chat backend requires base_url");
      if (!b.settings.contains("model") || !b.settings["model"].is_string())
        ck.fail(where + ": http_chat backend requires model");
      break;
    case BackendKind::mock_scripted:
      if (b.settings.contains("script") && !b.settings["script"].is_object())
        ck.fail(where + ": mock_scripted script must be an object");
      if (b.settings.contains("fixture") && !b.settings["fixture"].is_string())
        ck.fail(where + ": mock_scripted fixture must be a file path");
      break;
    case BackendKind::mock_planted: {
      if (b.settings.contains("hallucination_rate")) {
        const auto& r = b.settings["hallucination_rate"];
        if (!r.is_number() || r.get<double>() < 0.0 || r.get<double>() > 1.0)
          ck.fail(where + ": hallucination_rate must be in [0, 1]");
      }
      if (b.settings.contains("diversity")) {
        const auto& d = b.settings["diversity"];
        if (!d.is_number() || !(d.get<double>() > 0.0))
          ck.fail(where + ": diversity must be > 0");
      }
      break;
    }
  }
  return b;
}

}  // namespace

std::vector<Query> parse_queries(const json& array) {
  std::vector<std::string> problems;
  std::vector<Query> out;
  if (!array.is_array()) throw ConfigError({"queries must be an array of objects"});
  std::size_t idx = 0;
  for (const auto& q : array) {
    const std::string where = "query #" + std::to_string(idx++);
    if (!q.is_object()) {
      problems.push_back(where + ": not an object");
      continue;
    }
    Query query;
    try {
      query.query_id = q.value("query_id", std::string{});
      query.content = q.value("content", std::string{});
      const auto mod = q.value("modality", std::string{"text"});
      if (auto m = parse_modality(mod)) {
        query.modality = *m;
      } else {
        problems.push_back(where + ": unknown modality '" + mod + "'");
      }
      if (q.contains("reference_texts"))
        query.reference_texts = q.at("reference_texts").get<std::vector<std::string>>();
      query.item_id = q.value("item_id", std::string{});
      if (q.contains("prompt_template"))
        query.prompt_template = q.at("prompt_template").get<std::string>();
    } catch (const json::exception& e) {
      problems.push_back(where + ": " + e.what());
      continue;
    }
    if (!valid_identifier(query.query_id)) problems.push_back(where + ": missing or invalid query_id");
    out.push_back(std::move(query));
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return out;
}

DecodingParams decoding_from_json(const json& j, const DecodingParams& defaults) {
  Checker ck;
  auto d = parse_decoding(ck, j, defaults, "decoding");
  if (!ck.errors.empty()) throw ConfigError(ck.errors);
  return d;
}

ConfigValidation validate_config(const json& raw) {
  Checker ck;
  RunConfig cfg;

  if (!raw.is_object()) {
    return {std::nullopt, {"configuration root must be a JSON object"}};
  }

  static const std::set<std::string> kKnown = {
      "models", "queries", "judge", "measure", "samples", "decoding",
      "calibration_temperature", "weighting", "unparseable_policy", "selection_threshold",
      "include_self_explicit", "include_self_implicit", "refcheck", "modality_plan",
      "implicit_for_audio_visual", "cache_dir", "report_dir", "reference", "max_parallel",
      "seed", "planted_world"};
  for (const auto& [key, value] : raw.items())
    if (!kKnown.count(key)) ck.fail("unknown configuration key '" + key + "'");

  if (auto v = ck.get<std::string>(raw, "measure", "config")) {
    if (auto m = parse_measure_selection(*v)) {
      cfg.measure = *m;
    } else {
      ck.fail("measure must be one of explicit, implicit, auto");
    }
  }
  if (auto v = ck.get<int>(raw, "samples", "config")) cfg.default_samples = *v;
  if (cfg.default_samples < 1) ck.fail("samples (N_j) must be >= 1");
  cfg.decoding = parse_decoding(ck, raw.value("decoding", json()), DecodingParams{}, "config");
  if (auto v = ck.get<std::int64_t>(raw, "seed", "config")) {
    cfg.seed = *v;
    if (!cfg.decoding.seed) cfg.decoding.seed = *v;
  }
  if (auto v = ck.get<double>(raw, "calibration_temperature", "config"))
    cfg.calibration_temperature = *v;
  if (!(cfg.calibration_temperature > 0.0)) ck.fail("calibration temperature T must be > 0");

  if (auto v = ck.get<std::string>(raw, "weighting", "config")) {
    if (*v == "uniform") {
      cfg.weighted = false;
    } else if (auto m = parse_weight_mode(*v)) {
      cfg.weight_mode = *m;
    } else {
      ck.fail("weighting must be one of constant, per_query, uniform");
    }
  }
  if (auto v = ck.get<std::string>(raw, "unparseable_policy", "config")) {
    if (auto p = parse_unparseable_policy(*v)) {
      cfg.unparseable = *p;
    } else {
      ck.fail("unparseable_policy must be hallucinatory or supported");
    }
  }
  if (auto v = ck.get<double>(raw, "selection_threshold", "config")) cfg.selection_threshold = *v;
  if (!(cfg.selection_threshold > 0.0 && cfg.selection_threshold < 1.0))
    ck.fail("selection_threshold must be in (0, 1)");
  if (auto v = ck.get<bool>(raw, "include_self_explicit", "config")) cfg.include_self_explicit = *v;
  if (auto v = ck.get<bool>(raw, "include_self_implicit", "config")) cfg.include_self_implicit = *v;
  if (auto v = ck.get<bool>(raw, "refcheck", "config")) cfg.refcheck = *v;
  if (auto v = ck.get<std::string>(raw, "modality_plan", "config")) {
    if (auto p = parse_modality_plan(*v)) {
      cfg.modality_plan = *p;
    } else {
      ck.fail("modality_plan must be single or audio_visual");
    }
  }
  if (auto v = ck.get<bool>(raw, "implicit_for_audio_visual", "config"))
    cfg.implicit_for_audio_visual = *v;
  if (auto v = ck.get<std::string>(raw, "cache_dir", "config")) cfg.cache_dir = *v;
  if (auto v = ck.get<std::string>(raw, "report_dir", "config")) cfg.report_dir = *v;
  if (auto v = ck.get<std::string>(raw, "reference", "config")) cfg.reference_path = *v;
  if (auto v = ck.get<int>(raw, "max_parallel", "config")) cfg.max_parallel = *v;
  if (cfg.max_parallel < 1) ck.fail("max_parallel must be >= 1");
  if (raw.contains("planted_world")) {
    if (raw["planted_world"].is_object()) {
      cfg.planted_world = raw["planted_world"];
    } else {
      ck.fail("planted_world must be an object");
    }
  }

  // Models.
  std::set<ModelId> seen_models;
  const json models = raw.value("models", json::array());
  if (!models.is_array() || models.empty()) ck.fail("no models declared");
  const auto judge = ck.get<std::string>(raw, "judge", "config");
  if (judge) cfg.judge = *judge;
  std::size_t idx = 0;
  if (models.is_array()) {
    for (const auto& m : models) {
      const std::string where_idx = "model #" + std::to_string(idx++);
      if (!m.is_object()) {
        ck.fail(where_idx + ": not an object");
        continue;
      }
      ModelConfig mc;
      const auto id = ck.get<std::string>(m, "id", where_idx);
      if (!id || id->empty()) {
        ck.fail(where_idx + ": missing model id");
        continue;
      }
      mc.id = *id;
      const std::string where = "model '" + mc.id + "'";
      if (!valid_identifier(mc.id)) ck.fail(where + ": id must not contain '|' or whitespace");
      if (!seen_models.insert(mc.id).second) ck.fail("duplicate model id '" + mc.id + "'");

      const json roles = m.value("roles", json::object());
      mc.roles.target = roles.value("target", false);
      mc.roles.evidence_explicit = roles.value("evidence_explicit", false);
      mc.roles.evidence_implicit = roles.value("evidence_implicit", false);
      if (!mc.roles.any() && mc.id != cfg.judge) ck.fail(where + ": model has no role");

      mc.samples = cfg.default_samples;
      if (auto v = ck.get<int>(m, "samples", where)) mc.samples = *v;
      if (mc.samples < 1) ck.fail(where + ": samples (N_j) must be >= 1");
      mc.decoding = parse_decoding(ck, m.value("decoding", json()), cfg.decoding, where);
      mc.backend = parse_backend(ck, m.value("backend", json()), mc.id, where);
      cfg.models.push_back(std::move(mc));
    }
  }

  if (!judge) {
    ck.fail("no judge model declared");
  } else if (!seen_models.count(*judge)) {
    ck.fail("judge model '" + *judge + "' is not declared in models");
  }
  if (cfg.targets().empty()) ck.fail("no target models declared");
  const bool has_explicit = !cfg.explicit_evidence().empty();
  const bool has_implicit = !cfg.implicit_evidence().empty();
  if (!has_explicit && !has_implicit) ck.fail("no evidence models declared");
  if (cfg.measure == MeasureSelection::crosscheck_explicit && !has_explicit && has_implicit)
    ck.fail("measure explicit requires at least one evidence_explicit model");
  if (cfg.measure == MeasureSelection::crosscheck_implicit && !has_implicit && has_explicit)
    ck.fail("measure implicit requires at least one evidence_implicit model");
  if (cfg.measure == MeasureSelection::automatic && (has_explicit != has_implicit))
    ck.fail("measure auto requires both explicit and implicit evidence models");

  // Queries.
  if (raw.contains("queries")) {
    try {
      cfg.queries = parse_queries(raw.at("queries"));
    } catch (const ConfigError& e) {
      for (const auto& p : e.problems()) ck.fail(p);
    }
  } else {
    ck.fail("no queries declared");
  }
  std::set<QueryId> seen_queries;
  for (const auto& q : cfg.queries) {
    if (!seen_queries.insert(q.query_id).second)
      ck.fail("duplicate query_id '" + q.query_id + "'");
    if (cfg.refcheck && (!q.reference_texts || q.reference_texts->empty()))
      ck.fail("refcheck enabled but query '" + q.query_id + "' has no reference_texts");
    if (cfg.modality_plan == ModalityPlan::audio_visual && q.modality != Modality::video_visual &&
        q.modality != Modality::video_audio)
      ck.fail("audio_visual plan: query '" + q.query_id +
              "' must have modality video_visual or video_audio");
  }
  if (raw.contains("queries") && cfg.queries.empty()) ck.fail("no queries declared");
  if (cfg.modality_plan == ModalityPlan::audio_visual && !cfg.implicit_for_audio_visual &&
      cfg.measure == MeasureSelection::crosscheck_implicit)
    ck.fail("implicit measure is disabled for audio_visual plans (set implicit_for_audio_visual)");

  if (!ck.errors.empty()) return {std::nullopt, std::move(ck.errors)};
  return {std::move(cfg), {}};
}

RunConfig load_config(const json& raw) {
  auto v = validate_config(raw);
  if (!v.ok()) throw ConfigError(std::move(v.errors));
  return std::move(*v.config);
}

json config_snapshot(const RunConfig& c) {
  json models = json::array();
  for (const auto& m : c.models) {
    json b{{"kind", to_string(m.backend.kind)},
           {"fingerprint", m.backend.fingerprint()},
           {"max_parallel_requests", m.backend.max_parallel_requests}};
    json mods = json::array();
    for (auto mod : m.backend.modalities) mods.push_back(to_string(mod));
    b["modalities"] = mods;
    models.push_back({{"id", m.id},
                      {"roles",
                       {{"target", m.roles.target},
                        {"evidence_explicit", m.roles.evidence_explicit},
                        {"evidence_implicit", m.roles.evidence_implicit}}},
                      {"samples", m.samples},
                      {"decoding", to_json(m.decoding)},
                      {"backend", b}});
  }
  json j{{"models", models},
         {"num_queries", c.queries.size()},
         {"judge", c.judge},
         {"measure", to_string(c.measure)},
         {"calibration_temperature", c.calibration_temperature},
         {"weighting", c.weighted ? std::string(to_string(c.weight_mode)) : "uniform"},
         {"unparseable_policy", to_string(c.unparseable)},
         {"selection_threshold", c.selection_threshold},
         {"include_self_explicit", c.include_self_explicit},
         {"include_self_implicit", c.include_self_implicit},
         {"refcheck", c.refcheck},
         {"modality_plan", to_string(c.modality_plan)},
         {"implicit_for_audio_visual", c.implicit_for_audio_visual}};
  if (c.seed) j["seed"] = *c.seed;
  if (!c.planted_world.empty()) j["planted_world"] = c.planted_world;
  return j;
}

}  // namespace crosscheck
