#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace veritrace::text {

std::string_view trim(std::string_view s);

/// ASCII lowercase; bytes >= 0x80 pass through so UTF-8 stays intact.
std::string to_lower(std::string_view s);

bool is_space(char c);

/// Replaces every run of whitespace with one space and trims both ends.
std::string collapse_whitespace(std::string_view s);

/// Lowercase + whitespace collapse. Used for overlap detection and dedup keys.
std::string normalize_for_overlap(std::string_view s);

/// Lowercase, ASCII punctuation to spaces, whitespace collapse.
std::string normalize_for_match(std::string_view s);

bool contains_ci(std::string_view haystack, std::string_view needle);

std::vector<std::string_view> split_whitespace(std::string_view s);

std::vector<std::string_view> split_lines(std::string_view s);

std::string truncate(std::string_view s, std::size_t max_bytes);

}  // namespace veritrace::text
