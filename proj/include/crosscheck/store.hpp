#pragma once

// Content-addressed, append-only cache of backend outputs, and the
// serialized form of a finished benchmark run.

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "crosscheck/core.hpp"

namespace crosscheck::store {

class IntegrityError : public Error {
 public:
  using Error::Error;
};

// "kind|model_id|query_id|sample_index|prompt_hash|decoding_hash"
struct CacheKey {
  std::string kind;
  std::string model_id;
  std::string query_id;
  std::string sample_index;  // decimal, or "-" when not applicable
  std::string prompt_hash;
  std::string decoding_hash;

  std::string str() const;
  // Throws Error on malformed input.
  static CacheKey parse(std::string_view s);

  // Hashes the whitespace-normalised prompt and the canonical decoding JSON.
  static CacheKey make(std::string kind, std::string model_id, std::string query_id,
                       std::optional<int> sample_index, std::string_view prompt,
                       const nlohmann::json& decoding);
  // Same, with the decoding digest already computed by decoding_digest().
  static CacheKey make_with_digest(std::string kind, std::string model_id, std::string query_id,
                                   std::optional<int> sample_index, std::string_view prompt,
                                   std::string decoding_hash);
  static std::string decoding_digest(const nlohmann::json& decoding);

  friend bool operator==(const CacheKey&, const CacheKey&) = default;
};

struct CacheRecord {
  CacheKey key;
  nlohmann::json payload;
  std::string created_at;   // ISO-8601 UTC, informational only
  std::string fingerprint;  // backend fingerprint at write time

  // SHA-256 of the canonical payload.
  std::string checksum() const;
};

enum class PutResult { stored, already_present, conflict };

std::string_view to_string(PutResult r);

// UTC now as "YYYY-MM-DDTHH:MM:SSZ".
std::string utc_timestamp();

// Thread-safe. With a directory, records live in <dir>/<kind>/records.jsonl
// and an advisory lock serialises appends across processes; new lines written
// by other processes are picked up on the next miss or put.
class Store {
 public:
  Store();  // memory only
  explicit Store(std::filesystem::path dir);

  PutResult put(const CacheRecord& record);
  // Throws IntegrityError if the stored line for `key` fails its checksum.
  std::optional<CacheRecord> get(const CacheKey& key);

  std::size_t size() const;
  bool persistent() const noexcept { return dir_.has_value(); }
  const std::optional<std::filesystem::path>& directory() const noexcept { return dir_; }
  // Lines that could not be parsed at all (e.g. a torn final write).
  std::size_t skipped_lines() const;

 private:
  struct Shard {
    std::uintmax_t offset = 0;
  };

  std::filesystem::path shard_path(const std::string& kind) const;
  // Reads lines appended since the last visit. Caller holds mu_ exclusively.
  void refresh(const std::string& kind);
  void ingest_line(const std::string& line);

  std::optional<std::filesystem::path> dir_;
  mutable std::shared_mutex mu_;
  std::unordered_map<std::string, CacheRecord> records_;
  std::unordered_map<std::string, std::string> corrupt_;  // key -> reason
  std::map<std::string, Shard> shards_;
  std::size_t skipped_ = 0;
};

nlohmann::json to_json(const CacheRecord& r);

// ---------------------------------------------------------------------------
// Run artifacts

struct BenchmarkRun {
  // Snapshot of the effective configuration (no cache or report paths).
  nlohmann::json config;
  std::string requested_measure;  // "explicit", "implicit" or "auto"
  Measure measure = Measure::crosscheck_explicit;
  std::optional<double> avg_selfcheck;
  ModelId judge;
  std::string modality_plan = "single";

  WeightVector explicit_weights;
  WeightVector implicit_weights;
  // Only in per-query weighting mode.
  std::map<QueryId, WeightVector> explicit_query_weights;
  std::map<QueryId, WeightVector> implicit_query_weights;
  // Audio-visual plans weight each track separately: "visual/explicit", ...
  std::map<std::string, WeightVector> track_weights;

  std::map<ModelId, ModelScoreCard> selfcheck;
  std::map<ModelId, ModelScoreCard> scorecards;
  // Audio-visual plans: per-track cards keyed "visual" / "audio".
  std::map<std::string, std::map<ModelId, ModelScoreCard>> track_scorecards;
  std::map<ModelId, ModelScoreCard> refcheck;
  std::vector<RankEntry> ranking;
  std::vector<std::string> notes;
};

nlohmann::json to_json(const ModelScoreCard& c);
ModelScoreCard scorecard_from_json(const nlohmann::json& j);
nlohmann::json to_json(const WeightVector& w);
WeightVector weights_from_json(const nlohmann::json& j);

nlohmann::json to_json(const BenchmarkRun& run);
BenchmarkRun run_from_json(const nlohmann::json& j);

// Pretty-printed JSON with a trailing newline; byte-stable for equal runs.
std::string serialize_run(const BenchmarkRun& run);

// Leaderboard table, scores shown as percentages.
std::string render_markdown(const BenchmarkRun& run);

// Writes run.json and leaderboard.md into `dir`, creating it if needed.
void write_run_artifacts(const BenchmarkRun& run, const std::filesystem::path& dir);

}  // namespace crosscheck::store
