#pragma once

#include <chrono>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "crosscheck/core.hpp"

namespace crosscheck {

enum class BackendKind { http_chat, mock_scripted, mock_planted };

std::string_view to_string(BackendKind k);
std::optional<BackendKind> parse_backend_kind(std::string_view s);

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{1000};
  double backoff_multiplier = 2.0;
  std::chrono::milliseconds request_timeout{120000};
};

struct BackendDescriptor {
  ModelId model_id;
  BackendKind kind = BackendKind::mock_scripted;
  // Kind-specific settings. http_chat: base_url, model, api_key_env.
  // mock_scripted: script (inline object) or fixture (path).
  // mock_planted: hallucination_rate, diversity, family.
  nlohmann::json settings = nlohmann::json::object();
  int max_parallel_requests = 4;
  RetryPolicy retry;
  std::vector<Modality> modalities;

  bool supports(Modality m) const;
  // Stable digest of everything that can change what the backend returns.
  std::string fingerprint() const;
};

}  // namespace crosscheck
