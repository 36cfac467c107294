#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace crosscheck {

// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view data);

std::string base64_encode(std::string_view data);

// Collapses whitespace runs to one space and trims both ends.
std::string normalize_whitespace(std::string_view text);

// Sorted-key compact dump; the input to every digest taken over JSON.
std::string canonical_json(const nlohmann::json& j);

// 64-bit FNV-1a; used to derive simulator RNG streams from string keys.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t basis = 0xcbf29ce484222325ULL);

}  // namespace crosscheck
