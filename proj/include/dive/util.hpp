#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace dive {

using Bytes = std::vector<std::uint8_t>;

std::string sha256_hex(std::string_view data);
std::string sha256_hex(std::span<const std::uint8_t> data);
std::string base64_encode(std::span<const std::uint8_t> data);

std::uint64_t fnv1a64(std::string_view data);

/// Largest index <= pos that starts a UTF-8 code point.
std::size_t utf8_floor(std::string_view s, std::size_t pos);

/// Rounds to `digits` significant decimal digits; the result is the double
/// nearest to the rounded decimal.
double round_sig(double x, int digits);

/// Shortest decimal text that round-trips to `x` ("573", "0.0123", "1e-07").
std::string format_shortest(double x);

/// Fixed-point text with at most `decimals` places, trailing zeros trimmed.
std::string format_trimmed(double x, int decimals);

std::string read_text_file(const std::filesystem::path& path);
Bytes read_binary_file(const std::filesystem::path& path);

/// Writes via a sibling temp file + rename so readers never observe a torn file.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

/// Parses one JSON value per non-blank line. Throws Error(InvalidArgument) with
/// the 1-based line number on malformed input.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);
std::vector<nlohmann::json> parse_jsonl(std::string_view text);
std::string to_jsonl(const std::vector<nlohmann::json>& rows);

/// ISO-8601 UTC with second precision: "2025-08-02T00:00:00Z".
std::string format_utc(std::int64_t unix_seconds);
std::int64_t parse_utc(std::string_view iso);
std::int64_t now_unix_seconds();

std::string to_lower_ascii(std::string_view s);
std::string_view trim(std::string_view s);

}  // namespace dive
