#pragma once

// Model backends: the prompt table, judge-answer parsing, the Backend call
// interface with retry and per-backend concurrency limits, and the four
// pipeline calls built on top of it.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "crosscheck/backend_descriptor.hpp"
#include "crosscheck/core.hpp"

namespace crosscheck {

// ---------------------------------------------------------------------------
// Prompts

enum class PromptName {
  gen_text_bio,
  gen_image_desc,
  gen_video_visual,
  gen_video_audio,
  gen_speech_content,
  judge_explicit,
  implicit_list_errors,
  implicit_judge,
};

std::string_view to_string(PromptName p);
std::optional<PromptName> parse_prompt_name(std::string_view s);
const std::vector<PromptName>& all_prompt_names();

struct PromptTemplate {
  PromptName name;
  std::string text;

  // Placeholder names in order of first appearance, without braces.
  std::vector<std::string> placeholders() const;
};

const PromptTemplate& prompt_template(PromptName name);

using Bindings = std::map<std::string, std::string>;

// Exact substitution of every {placeholder}. Bound values are inserted
// verbatim and never rescanned. Throws Error naming the first unbound one.
std::string render_prompt(const PromptTemplate& tmpl, const Bindings& bindings);
std::string render_prompt_text(std::string_view text, const Bindings& bindings);

// "{name}" for text queries; "the image" / "the video" / "the audio" otherwise.
std::string subject_for(const Query& q);

// The generation prompt for a query: its prompt_template override (a template
// name or literal template text) or the modality default.
std::string generation_prompt(const Query& q);

// ---------------------------------------------------------------------------
// Answer parsing

enum class YesNo { yes, no, unparseable };

std::string_view to_string(YesNo v);

// First standalone "yes"/"no" among the first 10 alphanumeric tokens,
// case-insensitive.
YesNo parse_yes_no(std::string_view raw);

// ---------------------------------------------------------------------------
// Backend calls

class TransportError : public Error {
 public:
  using Error::Error;
};

// Permanent: the backend cannot take this input at all.
class ModalityError : public Error {
 public:
  using Error::Error;
};

enum class CallKind { generate, judge_support, analyze_errors, judge_analysis };

std::string_view to_string(CallKind k);

// One model call. `prompt` is the exact rendered text; the remaining fields
// carry structured context so mock backends need not parse prompts.
struct BackendRequest {
  CallKind kind = CallKind::generate;
  std::string prompt;
  DecodingParams decoding;
  // Media input for generation and error analysis of non-text queries.
  std::optional<Modality> media_modality;
  std::string media_source;

  QueryId query_id;
  // -1 for the target response, 0..N_j-1 for evidence passages.
  int sample_index = -1;
  std::string sentence;
  std::string evidence;
  std::string analysis;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

class Backend {
 public:
  explicit Backend(BackendDescriptor descriptor);
  virtual ~Backend() = default;
  Backend(const Backend&) = delete;
  Backend& operator=(const Backend&) = delete;

  const BackendDescriptor& descriptor() const noexcept { return descriptor_; }
  const ModelId& model_id() const noexcept { return descriptor_.model_id; }

  // Enforces modality support and max_parallel_requests, retries
  // TransportError with exponential backoff, and counts every attempt.
  std::string call(const BackendRequest& request);

  // Attempts issued to the underlying transport.
  std::uint64_t calls() const noexcept { return calls_.load(); }
  // Highest number of concurrent in-flight calls observed.
  int peak_in_flight() const noexcept { return peak_.load(); }

  void set_sleeper(Sleeper s) { sleeper_ = std::move(s); }

 protected:
  virtual std::string invoke(const BackendRequest& request) = 0;

 private:
  BackendDescriptor descriptor_;
  std::counting_semaphore<1024> slots_;
  std::atomic<std::uint64_t> calls_{0};
  std::atomic<int> in_flight_{0};
  std::atomic<int> peak_{0};
  Sleeper sleeper_;
};

// OpenAI-compatible chat completions. Settings: base_url, model, optional
// api_key_env (name of the environment variable holding the key).
class HttpChatBackend : public Backend {
 public:
  explicit HttpChatBackend(BackendDescriptor descriptor);

  // Request body for `request`; exposed for tests.
  nlohmann::json request_body(const BackendRequest& request) const;

 protected:
  std::string invoke(const BackendRequest& request) override;

 private:
  std::string scheme_host_port_;
  std::string path_prefix_;
  std::string model_name_;
  std::optional<std::string> api_key_;
};

// Replies from a fixture table. Settings: "script" (inline object) or
// "fixture" (path to a JSON file with the same shape):
//   responses: {query_id: text}
//   passages:  {query_id: [text, ...]}        sample n uses entry n mod size
//   analyses:  {query_id: {sentence: reply, "*": reply}}
//   default_analysis: text
//   judge: {rules: [{kind, sentence_contains, evidence_contains,
//                    analysis_contains, reply}],
//           default_support: "Yes", default_analysis: "No"}
class ScriptedBackend : public Backend {
 public:
  ScriptedBackend(BackendDescriptor descriptor, nlohmann::json script);
  explicit ScriptedBackend(BackendDescriptor descriptor);

 protected:
  std::string invoke(const BackendRequest& request) override;

 private:
  nlohmann::json script_;
};

using BackendFactory = std::function<std::unique_ptr<Backend>(const BackendDescriptor&)>;

// http_chat and mock_scripted. mock_planted needs a world and is built by the
// bench module; here it raises Error.
std::unique_ptr<Backend> make_backend(const BackendDescriptor& descriptor);

// ---------------------------------------------------------------------------
// Pipeline calls

// sample_index -1 produces the target response; otherwise an evidence passage.
EvidencePassage generate_passage(Backend& backend, const Query& query, const DecodingParams& decoding,
                                 int sample_index);

JudgeVerdict judge_support(Backend& judge, const EvidencePassage& evidence, const SentenceUnit& sentence,
                           const SentenceRef& ref = {});

std::string analyze_errors(Backend& evidence_model, const Query& query, const SentenceUnit& sentence);

// Polarity is inverted relative to judge_support: "Yes" means the analysis
// found inaccuracies, so the verdict is hallucinatory.
JudgeVerdict judge_analysis(Backend& judge, const Query& query, const SentenceUnit& sentence,
                            const std::string& analysis, const SentenceRef& ref = {},
                            const ModelId& evidence_model = {});

}  // namespace crosscheck
