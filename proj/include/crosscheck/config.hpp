#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crosscheck/backend_descriptor.hpp"
#include "crosscheck/core.hpp"

namespace crosscheck {

enum class MeasureSelection { crosscheck_explicit, crosscheck_implicit, automatic };

std::string_view to_string(MeasureSelection m);
std::optional<MeasureSelection> parse_measure_selection(std::string_view s);

enum class ModalityPlan { single, audio_visual };

std::string_view to_string(ModalityPlan p);
std::optional<ModalityPlan> parse_modality_plan(std::string_view s);

struct ModelConfig {
  ModelId id;
  ModelRoles roles;
  BackendDescriptor backend;
  int samples = 20;  // N_j, stochastic passages per query
  DecodingParams decoding;
};

inline constexpr double kDefaultCalibrationTemperature = 0.1;
inline constexpr double kDefaultSelectionThreshold = 0.30;
inline constexpr int kDefaultSamples = 20;

struct RunConfig {
  std::vector<ModelConfig> models;
  std::vector<Query> queries;
  ModelId judge;

  MeasureSelection measure = MeasureSelection::crosscheck_explicit;
  int default_samples = kDefaultSamples;
  DecodingParams decoding;
  double calibration_temperature = kDefaultCalibrationTemperature;
  WeightMode weight_mode = WeightMode::constant;
  // false: uniform weights over the evidence set.
  bool weighted = true;
  UnparseablePolicy unparseable = UnparseablePolicy::hallucinatory;
  double selection_threshold = kDefaultSelectionThreshold;
  bool include_self_explicit = true;
  bool include_self_implicit = false;
  bool refcheck = false;
  ModalityPlan modality_plan = ModalityPlan::single;
  bool implicit_for_audio_visual = false;

  std::string cache_dir;
  std::string report_dir;
  std::string reference_path;
  int max_parallel = 8;
  std::optional<std::int64_t> seed;

  // World parameters for mock_planted backends; interpreted by bench.
  nlohmann::json planted_world = nlohmann::json::object();

  const ModelConfig& model(const ModelId& id) const;
  const ModelConfig* find_model(const ModelId& id) const;
  std::vector<ModelId> targets() const;
  std::vector<ModelId> explicit_evidence() const;
  std::vector<ModelId> implicit_evidence() const;
};

struct ConfigValidation {
  std::optional<RunConfig> config;
  std::vector<std::string> errors;

  bool ok() const noexcept { return config.has_value(); }
};

// Checks a raw config tree and fills every default. Either a complete config
// or the full list of violations comes back, never both.
ConfigValidation validate_config(const nlohmann::json& raw);

// Same as validate_config but throws ConfigError on any violation.
RunConfig load_config(const nlohmann::json& raw);

// Parsed query list from a JSON array (or JSON Lines already split into
// objects). Throws ConfigError on malformed entries.
std::vector<Query> parse_queries(const nlohmann::json& array);

nlohmann::json to_json(const DecodingParams& d);
DecodingParams decoding_from_json(const nlohmann::json& j, const DecodingParams& defaults);
nlohmann::json to_json(const Query& q);

// Config snapshot stored in run artifacts. Queries are summarised by count.
nlohmann::json config_snapshot(const RunConfig& config);

}  // namespace crosscheck
