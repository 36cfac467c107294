#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "crosscheck/config.hpp"

namespace crosscheck::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kConfigError = 1;
inline constexpr int kGenerationError = 2;
inline constexpr int kIncomplete = 3;
inline constexpr int kCorrelationError = 4;

struct Overrides {
  std::optional<std::string> measure;
  std::optional<std::string> cache_dir;
  std::optional<std::string> report_dir;
  std::optional<std::string> reference;
  std::optional<int> max_parallel;
  std::optional<std::int64_t> seed;
};

// Reads a config file, applies overrides and resolves every relative path
// (queries file, cache/report dirs, reference, scripted fixtures, media)
// against the config's directory. A string "queries" value names a JSON
// Lines file. Throws ConfigError.
RunConfig load_config_file(const std::filesystem::path& path, const Overrides& overrides = {});

// Entry point of the crosscheck tool; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace crosscheck::cli
