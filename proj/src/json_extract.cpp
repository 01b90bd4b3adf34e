#include <optional>

#include "veritrace/llm_gateway.hpp"
#include "veritrace/text.hpp"

namespace veritrace {

namespace {

struct Fence {
  std::string info;
  std::size_t body_begin;
  std::size_t body_end;
};

std::vector<Fence> find_fences(std::string_view s) {
  std::vector<Fence> out;
  std::size_t pos = 0;
  while ((pos = s.find("```", pos)) != std::string_view::npos) {
    const std::size_t info_begin = pos + 3;
    const std::size_t nl = s.find('\n', info_begin);
    if (nl == std::string_view::npos) break;
    const std::size_t close = s.find("```", nl + 1);
    if (close == std::string_view::npos) break;
    out.push_back({text::to_lower(text::trim(s.substr(info_begin, nl - info_begin))), nl + 1, close});
    pos = close + 3;
  }
  return out;
}

// Models sometimes put raw newlines or tabs inside JSON strings; escape them
// so the strict parser accepts the text.
std::string escape_raw_controls(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool in_string = false;
  bool escaped = false;
  for (char c : s) {
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      } else if (c == '\n') {
        out += "\\n";
        continue;
      } else if (c == '\r') {
        out += "\\r";
        continue;
      } else if (c == '\t') {
        out += "\\t";
        continue;
      }
    } else if (c == '"') {
      in_string = true;
    }
    out.push_back(c);
  }
  return out;
}

std::optional<json> try_parse(std::string_view s) {
  const auto trimmed = text::trim(s);
  if (trimmed.empty()) return std::nullopt;
  auto v = json::parse(trimmed.begin(), trimmed.end(), nullptr, false);
  if (!v.is_discarded()) return v;
  const std::string fixed = escape_raw_controls(trimmed);
  v = json::parse(fixed, nullptr, false);
  if (!v.is_discarded()) return v;
  return std::nullopt;
}

// End offset (exclusive) of the balanced object starting at `open`, honoring
// JSON string literals.
std::optional<std::size_t> balanced_end(std::string_view s, std::size_t open) {
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = open; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      if (escaped) escaped = false;
      else if (c == '\\') escaped = true;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '{') ++depth;
    else if (c == '}') {
      if (--depth == 0) return i + 1;
    }
  }
  return std::nullopt;
}

}  // namespace

ExtractedJson extract_json(std::string_view reply) {
  const auto fences = find_fences(reply);
  for (const auto& f : fences) {
    if (f.info != "json") continue;
    if (auto v = try_parse(reply.substr(f.body_begin, f.body_end - f.body_begin))) {
      return {std::move(*v), f.body_begin, f.body_end, JsonSource::FencedJson};
    }
  }
  for (const auto& f : fences) {
    if (auto v = try_parse(reply.substr(f.body_begin, f.body_end - f.body_begin))) {
      return {std::move(*v), f.body_begin, f.body_end, JsonSource::FencedAny};
    }
  }
  for (std::size_t open = reply.find('{'); open != std::string_view::npos; open = reply.find('{', open + 1)) {
    const auto end = balanced_end(reply, open);
    if (!end) continue;
    if (auto v = try_parse(reply.substr(open, *end - open))) {
      return {std::move(*v), open, *end, JsonSource::BalancedBraces};
    }
  }
  throw ExtractionError(std::string(reply));
}

}  // namespace veritrace
