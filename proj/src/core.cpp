#include "crosscheck/core.hpp"

#include <algorithm>
#include <sstream>

namespace crosscheck {
namespace {

std::string join_problems(const std::vector<std::string>& problems) {
  std::ostringstream os;
  os << "invalid configuration";
  for (const auto& p : problems) os << "\n  - " << p;
  return os.str();
}

std::string join_gaps(const std::string& what, const std::vector<std::string>& gaps) {
  std::ostringstream os;
  os << what << " (" << gaps.size() << " missing)";
  const std::size_t shown = std::min<std::size_t>(gaps.size(), 20);
  for (std::size_t i = 0; i < shown; ++i) os << "\n  - " << gaps[i];
  if (shown < gaps.size()) os << "\n  ...";
  return os.str();
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : Error(join_problems(problems)), problems_(std::move(problems)) {}

IncompleteError::IncompleteError(std::string what, std::vector<std::string> gaps)
    : Error(join_gaps(what, gaps)), gaps_(std::move(gaps)) {}

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::text: return "text";
    case Modality::image: return "image";
    case Modality::video_visual: return "video_visual";
    case Modality::video_audio: return "video_audio";
    case Modality::audio: return "audio";
  }
  return "text";
}

std::optional<Modality> parse_modality(std::string_view s) {
  if (s == "text") return Modality::text;
  if (s == "image") return Modality::image;
  if (s == "video_visual") return Modality::video_visual;
  if (s == "video_audio") return Modality::video_audio;
  if (s == "audio") return Modality::audio;
  return std::nullopt;
}

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::supported: return "supported";
    case Verdict::hallucinatory: return "hallucinatory";
    case Verdict::unparseable: return "unparseable";
  }
  return "unparseable";
}

std::optional<Verdict> parse_verdict(std::string_view s) {
  if (s == "supported") return Verdict::supported;
  if (s == "hallucinatory") return Verdict::hallucinatory;
  if (s == "unparseable") return Verdict::unparseable;
  return std::nullopt;
}

std::string_view to_string(UnparseablePolicy p) {
  return p == UnparseablePolicy::hallucinatory ? "hallucinatory" : "supported";
}

std::optional<UnparseablePolicy> parse_unparseable_policy(std::string_view s) {
  if (s == "hallucinatory") return UnparseablePolicy::hallucinatory;
  if (s == "supported") return UnparseablePolicy::supported;
  return std::nullopt;
}

double verdict_value(Verdict v, UnparseablePolicy policy) {
  switch (v) {
    case Verdict::supported: return 0.0;
    case Verdict::hallucinatory: return 1.0;
    case Verdict::unparseable:
      return policy == UnparseablePolicy::hallucinatory ? 1.0 : 0.0;
  }
  return 1.0;
}

std::string_view to_string(Measure m) {
  switch (m) {
    case Measure::selfcheck: return "selfcheck";
    case Measure::crosscheck_explicit: return "explicit";
    case Measure::crosscheck_implicit: return "implicit";
    case Measure::refcheck: return "refcheck";
  }
  return "explicit";
}

std::optional<Measure> parse_measure(std::string_view s) {
  if (s == "selfcheck") return Measure::selfcheck;
  if (s == "explicit") return Measure::crosscheck_explicit;
  if (s == "implicit") return Measure::crosscheck_implicit;
  if (s == "refcheck") return Measure::refcheck;
  return std::nullopt;
}

std::string_view to_string(WeightMode m) {
  return m == WeightMode::constant ? "constant" : "per_query";
}

std::optional<WeightMode> parse_weight_mode(std::string_view s) {
  if (s == "constant") return WeightMode::constant;
  if (s == "per_query") return WeightMode::per_query;
  return std::nullopt;
}

DecodingParams judge_decoding() {
  DecodingParams d;
  d.temperature = 0.0;
  d.top_p = 1.0;
  d.beam_size = 1;
  d.max_tokens = 256;
  return d;
}

double WeightVector::at(const ModelId& id) const {
  auto it = entries.find(id);
  if (it == entries.end()) throw Error("no weight for evidence model '" + id + "'");
  return it->second;
}

WeightVector WeightVector::restricted_to(const std::vector<ModelId>& subset) const {
  WeightVector out;
  out.temperature = temperature;
  out.mode = mode;
  double total = 0.0;
  for (const auto& id : subset) {
    const double w = at(id);
    out.entries[id] = w;
    total += w;
  }
  if (subset.empty() || !(total > 0.0)) throw Error("cannot restrict weights to an empty evidence set");
  for (auto& [id, w] : out.entries) w /= total;
  return out;
}

std::vector<RankEntry> rank_by_score(const std::map<ModelId, double>& scores) {
  std::vector<RankEntry> out;
  out.reserve(scores.size());
  for (const auto& [id, s] : scores) out.push_back({id, 0, s});
  // std::map iteration already orders ids, so a stable sort on score keeps the
  // lexicographic tie-break.
  std::stable_sort(out.begin(), out.end(),
                   [](const RankEntry& a, const RankEntry& b) { return a.score < b.score; });
  for (std::size_t i = 0; i < out.size(); ++i) out[i].rank = static_cast<int>(i) + 1;
  return out;
}

}  // namespace crosscheck
