#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mmas {

/// Lowercase hex SHA-256 of the given bytes.
std::string sha256_hex(std::string_view data);

/// 64-bit FNV-1a; used to seed deterministic generators from content.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t basis = 0xcbf29ce484222325ULL);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace mmas
