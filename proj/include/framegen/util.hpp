#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace framegen {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;

// FNV-1a 64; chainable through `state`.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t state = kFnvOffset);
std::uint64_t fnv1a64(std::span<const double> values, std::uint64_t state = kFnvOffset);
std::string hex64(std::uint64_t v);

std::vector<std::string> split(std::string_view s, char sep);
std::string_view trim(std::string_view s);

inline constexpr std::string_view kToolVersion = "framegen 0.1.0";

}  // namespace framegen
