#include "crosscheck/backend.hpp"

#include <httplib.h>

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "crosscheck/hash.hpp"

namespace crosscheck {
namespace {

const std::map<PromptName, std::string_view>& prompt_names() {
  static const std::map<PromptName, std::string_view> names = {
      {PromptName::gen_text_bio, "gen_text_bio"},
      {PromptName::gen_image_desc, "gen_image_desc"},
      {PromptName::gen_video_visual, "gen_video_visual"},
      {PromptName::gen_video_audio, "gen_video_audio"},
      {PromptName::gen_speech_content, "gen_speech_content"},
      {PromptName::judge_explicit, "judge_explicit"},
      {PromptName::implicit_list_errors, "implicit_list_errors"},
      {PromptName::implicit_judge, "implicit_judge"},
  };
  return names;
}

bool placeholder_char(char c) {
  return std::islower(static_cast<unsigned char>(c)) || c == '_';
}

// Calls f(name, begin, end) for each {lowercase_name} in text.
template <typename F>
void scan_placeholders(std::string_view text, F&& f) {
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] != '{') {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < text.size() && placeholder_char(text[j])) ++j;
    if (j > i + 1 && j < text.size() && text[j] == '}') {
      f(text.substr(i + 1, j - i - 1), i, j + 1);
      i = j + 1;
    } else {
      ++i;
    }
  }
}

bool is_url(const std::string& s) {
  return s.rfind("http://", 0) == 0 || s.rfind("https://", 0) == 0 || s.rfind("data:", 0) == 0;
}

std::string mime_for(const std::string& path) {
  static const std::map<std::string, std::string> types = {
      {".png", "image/png"},   {".jpg", "image/jpeg"},  {".jpeg", "image/jpeg"}, {".gif", "image/gif"},
      {".webp", "image/webp"}, {".mp4", "video/mp4"},   {".webm", "video/webm"}, {".mov", "video/quicktime"},
      {".wav", "audio/wav"},   {".mp3", "audio/mpeg"},  {".flac", "audio/flac"}, {".ogg", "audio/ogg"},
  };
  auto dot = path.rfind('.');
  if (dot != std::string::npos) {
    std::string ext = path.substr(dot);
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (auto it = types.find(ext); it != types.end()) return it->second;
  }
  return "application/octet-stream";
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read media file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool contains(const std::string& hay, const nlohmann::json& rule, const char* field) {
  if (!rule.contains(field)) return true;
  return hay.find(rule.at(field).get<std::string>()) != std::string::npos;
}

}  // namespace

std::string_view to_string(PromptName p) { return prompt_names().at(p); }

std::optional<PromptName> parse_prompt_name(std::string_view s) {
  for (const auto& [p, name] : prompt_names())
    if (name == s) return p;
  return std::nullopt;
}

const std::vector<PromptName>& all_prompt_names() {
  static const std::vector<PromptName> all = [] {
    std::vector<PromptName> v;
    for (const auto& [p, name] : prompt_names()) v.push_back(p);
    return v;
  }();
  return all;
}

std::vector<std::string> PromptTemplate::placeholders() const {
  std::vector<std::string> out;
  scan_placeholders(text, [&](std::string_view name, std::size_t, std::size_t) {
    if (std::find(out.begin(), out.end(), name) == out.end()) out.emplace_back(name);
  });
  return out;
}

const PromptTemplate& prompt_template(PromptName name) {
  static const std::map<PromptName, PromptTemplate> table = {
      {PromptName::gen_text_bio, {PromptName::gen_text_bio, "Generate a passage about {name}."}},
      {PromptName::gen_image_desc, {PromptName::gen_image_desc, "Describe the image in one paragraph."}},
      {PromptName::gen_video_visual, {PromptName::gen_video_visual, "Describe the video in one paragraph."}},
      {PromptName::gen_video_audio, {PromptName::gen_video_audio, "Describe the audio in one paragraph."}},
      {PromptName::gen_speech_content,
       {PromptName::gen_speech_content, "What does the man/woman say in the video?"}},
      {PromptName::judge_explicit,
       {PromptName::judge_explicit,
        "Context: {evidence_passage}\n\nSentence: {sentence}\n\n"
        "Is the sentence supported by the context above? Answer Yes or No.\n\nAnswer:"}},
      {PromptName::implicit_list_errors,
       {PromptName::implicit_list_errors,
        "You are given the following sentence about {subject} that might be inaccurate:\n{sentence}\n"
        " List possible inaccurate information in this sentence."}},
      {PromptName::implicit_judge,
       {PromptName::implicit_judge,
        "You are given the following sentence about {subject}:\n{sentence}\n"
        "The following is an analysis of possible inaccuracies in this sentence:\n{list_of_possible_errors}\n"
        "Based on the analysis, determine if the sentence contains any inaccurate information. "
        "Answer Yes or No.\n\nAnswer:"}},
  };
  return table.at(name);
}

std::string render_prompt_text(std::string_view text, const Bindings& bindings) {
  std::string out;
  out.reserve(text.size());
  std::size_t last = 0;
  scan_placeholders(text, [&](std::string_view name, std::size_t begin, std::size_t end) {
    auto it = bindings.find(std::string(name));
    if (it == bindings.end()) throw Error("unbound placeholder {" + std::string(name) + "}");
    out.append(text.substr(last, begin - last));
    out.append(it->second);
    last = end;
  });
  out.append(text.substr(last));
  return out;
}

std::string render_prompt(const PromptTemplate& tmpl, const Bindings& bindings) {
  try {
    return render_prompt_text(tmpl.text, bindings);
  } catch (const Error& e) {
    throw Error(std::string(e.what()) + " in template " + std::string(to_string(tmpl.name)));
  }
}

std::string subject_for(const Query& q) {
  switch (q.modality) {
    case Modality::text: return q.content;
    case Modality::image: return "the image";
    case Modality::video_visual: return "the video";
    case Modality::video_audio: return "the video";
    case Modality::audio: return "the audio";
  }
  return q.content;
}

std::string generation_prompt(const Query& q) {
  const Bindings b = {{"name", q.content}, {"subject", subject_for(q)}};
  if (q.prompt_template) {
    if (auto named = parse_prompt_name(*q.prompt_template)) return render_prompt(prompt_template(*named), b);
    return render_prompt_text(*q.prompt_template, b);
  }
  switch (q.modality) {
    case Modality::text: return render_prompt(prompt_template(PromptName::gen_text_bio), b);
    case Modality::image: return render_prompt(prompt_template(PromptName::gen_image_desc), b);
    case Modality::video_visual: return render_prompt(prompt_template(PromptName::gen_video_visual), b);
    case Modality::video_audio:
    case Modality::audio: return render_prompt(prompt_template(PromptName::gen_video_audio), b);
  }
  throw Error("no generation prompt for query '" + q.query_id + "'");
}

std::string_view to_string(YesNo v) {
  switch (v) {
    case YesNo::yes: return "yes";
    case YesNo::no: return "no";
    case YesNo::unparseable: return "unparseable";
  }
  return "unparseable";
}

YesNo parse_yes_no(std::string_view raw) {
  int tokens = 0;
  std::size_t i = 0;
  while (i < raw.size() && tokens < 10) {
    while (i < raw.size() && !std::isalnum(static_cast<unsigned char>(raw[i]))) ++i;
    if (i == raw.size()) break;
    std::string tok;
    while (i < raw.size() && std::isalnum(static_cast<unsigned char>(raw[i])))
      tok += static_cast<char>(std::tolower(static_cast<unsigned char>(raw[i++])));
    ++tokens;
    if (tok == "yes") return YesNo::yes;
    if (tok == "no") return YesNo::no;
  }
  return YesNo::unparseable;
}

std::string_view to_string(CallKind k) {
  switch (k) {
    case CallKind::generate: return "generate";
    case CallKind::judge_support: return "judge_support";
    case CallKind::analyze_errors: return "analyze_errors";
    case CallKind::judge_analysis: return "judge_analysis";
  }
  return "generate";
}

// ---------------------------------------------------------------------------
// Backend

Backend::Backend(BackendDescriptor descriptor)
    : descriptor_(std::move(descriptor)),
      slots_(std::clamp(descriptor_.max_parallel_requests, 1, 1024)),
      sleeper_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {}

std::string Backend::call(const BackendRequest& request) {
  if (request.media_modality && !descriptor_.supports(*request.media_modality))
    throw ModalityError("backend '" + descriptor_.model_id + "' does not accept " +
                        std::string(to_string(*request.media_modality)) + " input");
  if (!request.media_modality && !descriptor_.supports(Modality::text))
    throw ModalityError("backend '" + descriptor_.model_id + "' does not accept text prompts");

  const RetryPolicy& retry = descriptor_.retry;
  const int attempts = std::max(1, retry.max_attempts);
  auto backoff = retry.initial_backoff;
  for (int attempt = 1;; ++attempt) {
    slots_.acquire();
    const int now = ++in_flight_;
    int peak = peak_.load();
    while (now > peak && !peak_.compare_exchange_weak(peak, now)) {
    }
    ++calls_;
    try {
      std::string out = invoke(request);
      --in_flight_;
      slots_.release();
      return out;
    } catch (const TransportError& e) {
      --in_flight_;
      slots_.release();
      if (attempt >= attempts)
        throw TransportError("backend '" + descriptor_.model_id + "' failed after " + std::to_string(attempt) +
                             " attempts: " + e.what());
    } catch (...) {
      --in_flight_;
      slots_.release();
      throw;
    }
    if (backoff.count() > 0) sleeper_(backoff);
    backoff = std::chrono::milliseconds(
        static_cast<std::int64_t>(static_cast<double>(backoff.count()) * retry.backoff_multiplier));
  }
}

// ---------------------------------------------------------------------------
// HTTP

HttpChatBackend::HttpChatBackend(BackendDescriptor descriptor) : Backend(std::move(descriptor)) {
  const auto& s = this->descriptor().settings;
  const std::string base = s.value("base_url", std::string{});
  model_name_ = s.value("model", std::string{});
  if (base.empty() || model_name_.empty())
    throw ConfigError({"backend '" + model_id() + "': http_chat requires base_url and model"});
  const auto scheme = base.find("://");
  if (scheme == std::string::npos) throw ConfigError({"backend '" + model_id() + "': base_url needs a scheme"});
  const auto slash = base.find('/', scheme + 3);
  scheme_host_port_ = base.substr(0, slash);
  path_prefix_ = slash == std::string::npos ? "" : base.substr(slash);
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
  if (s.contains("api_key_env")) {
    const std::string var = s.at("api_key_env").get<std::string>();
    const char* key = std::getenv(var.c_str());
    if (key == nullptr || *key == '\0')
      throw ConfigError({"backend '" + model_id() + "': environment variable " + var + " is not set"});
    api_key_ = key;
  }
}

nlohmann::json HttpChatBackend::request_body(const BackendRequest& request) const {
  nlohmann::json content;
  if (request.media_modality && *request.media_modality != Modality::text) {
    const std::string& src = request.media_source;
    const std::string url =
        is_url(src) ? src : "data:" + mime_for(src) + ";base64," + base64_encode(read_file(src));
    nlohmann::json media;
    switch (*request.media_modality) {
      case Modality::image:
        media = {{"type", "image_url"}, {"image_url", {{"url", url}}}};
        break;
      case Modality::video_visual:
      case Modality::video_audio:
        media = {{"type", "video_url"}, {"video_url", {{"url", url}}}};
        break;
      case Modality::audio:
        media = {{"type", "audio_url"}, {"audio_url", {{"url", url}}}};
        break;
      case Modality::text:
        break;
    }
    content = nlohmann::json::array({{{"type", "text"}, {"text", request.prompt}}, media});
  } else {
    content = request.prompt;
  }
  nlohmann::json body = {
      {"model", model_name_},
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", content}}})},
      {"temperature", request.decoding.temperature},
      {"top_p", request.decoding.top_p},
      {"max_tokens", request.decoding.max_tokens},
  };
  if (request.decoding.seed) body["seed"] = *request.decoding.seed;
  return body;
}

std::string HttpChatBackend::invoke(const BackendRequest& request) {
  httplib::Client client(scheme_host_port_);
  const auto timeout = descriptor().retry.request_timeout;
  const auto secs = static_cast<time_t>(timeout.count() / 1000);
  const auto usecs = static_cast<time_t>((timeout.count() % 1000) * 1000);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (api_key_) headers.emplace("Authorization", "Bearer " + *api_key_);

  auto res = client.Post(path_prefix_ + "/chat/completions", headers, request_body(request).dump(),
                         "application/json");
  if (!res) throw TransportError("transport error: " + httplib::to_string(res.error()));
  if (res->status == 429 || res->status >= 500)
    throw TransportError("HTTP " + std::to_string(res->status));
  if (res->status != 200)
    throw Error("backend '" + model_id() + "' rejected the request: HTTP " + std::to_string(res->status) + " " +
                res->body.substr(0, 200));
  try {
    const auto j = nlohmann::json::parse(res->body);
    const auto& c = j.at("choices").at(0).at("message").at("content");
    if (c.is_string()) return c.get<std::string>();
    std::string text;
    for (const auto& part : c)
      if (part.value("type", "") == "text") text += part.value("text", "");
    return text;
  } catch (const nlohmann::json::exception& e) {
    throw TransportError(std::string("malformed chat completion: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Scripted mock

ScriptedBackend::ScriptedBackend(BackendDescriptor descriptor, nlohmann::json script)
    : Backend(std::move(descriptor)), script_(std::move(script)) {}

namespace {

// Inlines a fixture file as settings.script so the fingerprint (and with it
// every cache key) follows the file's contents rather than its path.
BackendDescriptor inline_fixture(BackendDescriptor d) {
  auto& s = d.settings;
  if (s.contains("script") || !s.contains("fixture")) return d;
  const std::string path = s.at("fixture").get<std::string>();
  std::ifstream in(path);
  if (!in) throw ConfigError({"backend '" + d.model_id + "': cannot read fixture '" + path + "'"});
  try {
    s["script"] = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError({"backend '" + d.model_id + "': bad fixture '" + path + "': " + e.what()});
  }
  s.erase("fixture");
  return d;
}

}  // namespace

ScriptedBackend::ScriptedBackend(BackendDescriptor d) : Backend(inline_fixture(std::move(d))) {
  const auto& s = descriptor().settings;
  script_ = s.contains("script") ? s.at("script") : nlohmann::json::object();
}

std::string ScriptedBackend::invoke(const BackendRequest& r) {
  auto missing = [&](const std::string& what) {
    return Error("scripted backend '" + model_id() + "' has no " + what + " for query '" + r.query_id + "'");
  };
  switch (r.kind) {
    case CallKind::generate: {
      if (r.sample_index < 0) {
        const auto& responses = script_.value("responses", nlohmann::json::object());
        if (!responses.contains(r.query_id)) throw missing("response");
        return responses.at(r.query_id).get<std::string>();
      }
      const auto& passages = script_.value("passages", nlohmann::json::object());
      if (!passages.contains(r.query_id) || passages.at(r.query_id).empty()) throw missing("passages");
      const auto& list = passages.at(r.query_id);
      return list.at(static_cast<std::size_t>(r.sample_index) % list.size()).get<std::string>();
    }
    case CallKind::analyze_errors: {
      const auto& analyses = script_.value("analyses", nlohmann::json::object());
      if (analyses.contains(r.query_id)) {
        const auto& table = analyses.at(r.query_id);
        if (table.contains(r.sentence)) return table.at(r.sentence).get<std::string>();
        if (table.contains("*")) return table.at("*").get<std::string>();
      }
      if (script_.contains("default_analysis")) return script_.at("default_analysis").get<std::string>();
      throw missing("analysis");
    }
    case CallKind::judge_support:
    case CallKind::judge_analysis: {
      const bool support = r.kind == CallKind::judge_support;
      const auto& judge = script_.value("judge", nlohmann::json::object());
      for (const auto& rule : judge.value("rules", nlohmann::json::array())) {
        const std::string kind = rule.value("kind", "any");
        if (kind != "any" && kind != (support ? "support" : "analysis")) continue;
        if (contains(r.sentence, rule, "sentence_contains") && contains(r.evidence, rule, "evidence_contains") &&
            contains(r.analysis, rule, "analysis_contains"))
          return rule.at("reply").get<std::string>();
      }
      return support ? judge.value("default_support", "Yes") : judge.value("default_analysis", "No");
    }
  }
  throw missing("reply");
}

std::unique_ptr<Backend> make_backend(const BackendDescriptor& d) {
  switch (d.kind) {
    case BackendKind::http_chat: return std::make_unique<HttpChatBackend>(d);
    case BackendKind::mock_scripted: return std::make_unique<ScriptedBackend>(d);
    case BackendKind::mock_planted: break;
  }
  throw Error("backend '" + d.model_id + "': mock_planted backends need a planted world");
}

// ---------------------------------------------------------------------------
// Pipeline calls

EvidencePassage generate_passage(Backend& backend, const Query& query, const DecodingParams& decoding,
                                 int sample_index) {
  BackendRequest r;
  r.kind = CallKind::generate;
  r.prompt = generation_prompt(query);
  r.decoding = decoding;
  // Distinct samples must not share a sampling seed.
  if (decoding.seed) r.decoding.seed = *decoding.seed + sample_index + 1;
  if (query.modality != Modality::text) {
    r.media_modality = query.modality;
    r.media_source = query.content;
  }
  r.query_id = query.query_id;
  r.sample_index = sample_index;
  EvidencePassage p;
  p.model_id = backend.model_id();
  p.query_id = query.query_id;
  p.sample_index = sample_index;
  p.decoding = decoding;
  p.text = backend.call(r);
  return p;
}

JudgeVerdict judge_support(Backend& judge, const EvidencePassage& evidence, const SentenceUnit& sentence,
                           const SentenceRef& ref) {
  BackendRequest r;
  r.kind = CallKind::judge_support;
  r.prompt = render_prompt(prompt_template(PromptName::judge_explicit),
                           {{"evidence_passage", evidence.text}, {"sentence", sentence.text}});
  r.decoding = judge_decoding();
  r.query_id = evidence.query_id;
  r.sample_index = evidence.sample_index;
  r.sentence = sentence.text;
  r.evidence = evidence.text;

  JudgeVerdict v;
  v.sentence = ref;
  if (v.sentence.query_id.empty()) v.sentence.query_id = evidence.query_id;
  v.sentence.sentence_index = sentence.index;
  v.evidence = {evidence.model_id, evidence.sample_index};
  v.raw_judge_output = judge.call(r);
  switch (parse_yes_no(v.raw_judge_output)) {
    case YesNo::yes: v.verdict = Verdict::supported; break;
    case YesNo::no: v.verdict = Verdict::hallucinatory; break;
    case YesNo::unparseable: v.verdict = Verdict::unparseable; break;
  }
  return v;
}

std::string analyze_errors(Backend& evidence_model, const Query& query, const SentenceUnit& sentence) {
  BackendRequest r;
  r.kind = CallKind::analyze_errors;
  r.prompt = render_prompt(prompt_template(PromptName::implicit_list_errors),
                           {{"subject", subject_for(query)}, {"sentence", sentence.text}});
  r.decoding = judge_decoding();
  if (query.modality != Modality::text) {
    r.media_modality = query.modality;
    r.media_source = query.content;
  }
  r.query_id = query.query_id;
  r.sentence = sentence.text;
  return evidence_model.call(r);
}

JudgeVerdict judge_analysis(Backend& judge, const Query& query, const SentenceUnit& sentence,
                            const std::string& analysis, const SentenceRef& ref, const ModelId& evidence_model) {
  if (analysis.empty()) throw Error("judge_analysis: empty analysis for query '" + query.query_id + "'");
  BackendRequest r;
  r.kind = CallKind::judge_analysis;
  r.prompt = render_prompt(
      prompt_template(PromptName::implicit_judge),
      {{"subject", subject_for(query)}, {"sentence", sentence.text}, {"list_of_possible_errors", analysis}});
  r.decoding = judge_decoding();
  r.query_id = query.query_id;
  r.sentence = sentence.text;
  r.analysis = analysis;

  JudgeVerdict v;
  v.sentence = ref;
  if (v.sentence.query_id.empty()) v.sentence.query_id = query.query_id;
  v.sentence.sentence_index = sentence.index;
  v.evidence = {evidence_model, -1};
  v.raw_judge_output = judge.call(r);
  switch (parse_yes_no(v.raw_judge_output)) {
    case YesNo::yes: v.verdict = Verdict::hallucinatory; break;
    case YesNo::no: v.verdict = Verdict::supported; break;
    case YesNo::unparseable: v.verdict = Verdict::unparseable; break;
  }
  return v;
}

}  // namespace crosscheck
