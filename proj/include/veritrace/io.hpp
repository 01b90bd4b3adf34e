#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace veritrace {

using json = nlohmann::json;

/// One parsed line of a JSON-lines file. `error` is set instead of `value`
/// when the line is not valid JSON.
struct JsonlLine {
  std::size_t line_no = 0;  // 1-based
  json value;
  std::string error;
};

/// Reads a JSON-lines file. Blank lines are skipped. Throws IoError when the
/// file cannot be opened.
std::vector<JsonlLine> read_jsonl(const std::filesystem::path& path);

/// Serializes one JSON value on one line. Keys are sorted; invalid UTF-8 is
/// replaced rather than thrown on.
std::string dump_line(const json& value);

std::string to_jsonl(const std::vector<json>& values);

std::string read_file(const std::filesystem::path& path);

/// Writes through a temporary sibling and renames it over `path`, so readers
/// never observe a partially written file.
void atomic_write(const std::filesystem::path& path, std::string_view content);

void append_line(const std::filesystem::path& path, std::string_view line);

std::string sha256_hex(std::string_view data);

std::uint64_t fnv1a64(std::string_view data);

/// UTC ISO-8601 timestamp with second resolution.
std::string utc_timestamp();

/// Maps an arbitrary id to a portable file name ([A-Za-z0-9._-] kept,
/// everything else percent-encoded).
std::string encode_file_stem(std::string_view id);

}  // namespace veritrace
