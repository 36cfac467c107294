#pragma once

// Domain types shared by every crosscheck module. All of these are plain
// values: once built they are not mutated, so they can be shared freely
// between worker threads.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace crosscheck {

using ModelId = std::string;
using QueryId = std::string;

// ---------------------------------------------------------------------------
// Errors

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  std::vector<std::string> problems_;
};

// Raised when a verdict matrix or artifact set has holes. `gaps` names each
// missing cell so callers can report them verbatim.
class IncompleteError : public Error {
 public:
  IncompleteError(std::string what, std::vector<std::string> gaps);
  const std::vector<std::string>& gaps() const noexcept { return gaps_; }

 private:
  std::vector<std::string> gaps_;
};

// ---------------------------------------------------------------------------
// Enumerations

enum class Modality { text, image, video_visual, video_audio, audio };

std::string_view to_string(Modality m);
std::optional<Modality> parse_modality(std::string_view s);

enum class Verdict { supported = 0, hallucinatory = 1, unparseable = 2 };

std::string_view to_string(Verdict v);
std::optional<Verdict> parse_verdict(std::string_view s);

// How an unparseable judge answer is counted numerically.
enum class UnparseablePolicy { hallucinatory, supported };

std::string_view to_string(UnparseablePolicy p);
std::optional<UnparseablePolicy> parse_unparseable_policy(std::string_view s);

// 0.0 or 1.0; unparseable follows the policy.
double verdict_value(Verdict v, UnparseablePolicy policy);

enum class Measure { selfcheck, crosscheck_explicit, crosscheck_implicit, refcheck };

std::string_view to_string(Measure m);
std::optional<Measure> parse_measure(std::string_view s);

enum class WeightMode { constant, per_query };

std::string_view to_string(WeightMode m);
std::optional<WeightMode> parse_weight_mode(std::string_view s);

// ---------------------------------------------------------------------------
// Models, queries, responses

struct ModelRoles {
  bool target = false;
  bool evidence_explicit = false;
  bool evidence_implicit = false;

  bool any() const noexcept { return target || evidence_explicit || evidence_implicit; }
};

struct Query {
  QueryId query_id;
  Modality modality = Modality::text;
  // Subject name for text queries, media path or URL otherwise.
  std::string content;
  // Present iff reference-based checking is possible for this query.
  std::optional<std::vector<std::string>> reference_texts;
  // Pairs the visual and audio tracks of one audio-visual item. Defaults to
  // query_id when unset.
  std::string item_id;
  // Overrides the generation template chosen from the modality.
  std::optional<std::string> prompt_template;

  const std::string& item() const noexcept { return item_id.empty() ? query_id : item_id; }
};

struct SentenceUnit {
  std::size_t index = 0;
  std::string text;
  // [begin, end) byte offsets into the owning response text.
  std::size_t begin = 0;
  std::size_t end = 0;

  friend bool operator==(const SentenceUnit&, const SentenceUnit&) = default;
};

struct Response {
  ModelId model_id;
  QueryId query_id;
  std::string text;
  std::vector<SentenceUnit> sentences;
};

struct DecodingParams {
  double temperature = 1.0;
  double top_p = 0.9;
  int beam_size = 1;
  int max_tokens = 512;
  std::optional<std::int64_t> seed;

  friend bool operator==(const DecodingParams&, const DecodingParams&) = default;
};

// Greedy settings used for judge calls and error analyses.
DecodingParams judge_decoding();

struct EvidencePassage {
  ModelId model_id;
  QueryId query_id;
  int sample_index = 0;
  std::string text;
  DecodingParams decoding;
};

// Which (evidence model, sample) or analysis a verdict was judged against.
struct EvidenceRef {
  ModelId evidence_model_id;
  int sample_index = -1;  // -1 for implicit analyses and references
};

struct SentenceRef {
  QueryId query_id;
  ModelId target_model_id;
  std::size_t sentence_index = 0;
};

struct JudgeVerdict {
  SentenceRef sentence;
  EvidenceRef evidence;
  Verdict verdict = Verdict::unparseable;
  std::string raw_judge_output;
};

// ---------------------------------------------------------------------------
// Weights and scores

struct WeightVector {
  std::map<ModelId, double> entries;
  double temperature = 0.1;
  WeightMode mode = WeightMode::constant;

  double at(const ModelId& id) const;
  // Softmax restricted to `subset`, i.e. the entries renormalised.
  WeightVector restricted_to(const std::vector<ModelId>& subset) const;
};

struct ScoreKey {
  QueryId query_id;
  std::size_t sentence_index = 0;

  friend auto operator<=>(const ScoreKey&, const ScoreKey&) = default;
};

struct ModelScoreCard {
  ModelId model_id;
  Measure measure = Measure::crosscheck_explicit;
  std::map<ScoreKey, double> sentence_scores;
  std::map<QueryId, double> query_scores;
  double corpus_score = 0.0;
  // Keys: "audio", "visual", "combined".
  std::map<std::string, double> modality_scores;
  std::size_t unparseable_verdicts = 0;
  std::size_t total_verdicts = 0;
  // Queries whose response had no sentences; left out of the corpus mean.
  std::vector<QueryId> excluded_queries;
};

struct RankEntry {
  ModelId model_id;
  int rank = 0;
  double score = 0.0;
};

// Orders models by ascending score (rank 1 = least hallucinatory), ties by id.
std::vector<RankEntry> rank_by_score(const std::map<ModelId, double>& scores);

}  // namespace crosscheck
