#include "dive/util.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "dive/error.hpp"

namespace dive {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::MalformedManifest: return "MalformedManifest";
    case ErrorCode::AnchorNotFound: return "AnchorNotFound";
    case ErrorCode::UnreadableImage: return "UnreadableImage";
    case ErrorCode::UnknownFigureId: return "UnknownFigureId";
    case ErrorCode::UnknownElement: return "UnknownElement";
    case ErrorCode::UnbalancedGroup: return "UnbalancedGroup";
    case ErrorCode::EmptyFormula: return "EmptyFormula";
    case ErrorCode::SyntaxError: return "SyntaxError";
    case ErrorCode::UnparseableQuantity: return "UnparseableQuantity";
    case ErrorCode::UnitKindMismatch: return "UnitKindMismatch";
    case ErrorCode::ValidationFailure: return "ValidationFailure";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::HttpStatus: return "HttpStatus";
    case ErrorCode::RateLimited: return "RateLimited";
    case ErrorCode::CassetteMiss: return "CassetteMiss";
    case ErrorCode::MalformedResponse: return "MalformedResponse";
    case ErrorCode::BackendUnavailable: return "BackendUnavailable";
    case ErrorCode::ImageLoadError: return "ImageLoadError";
    case ErrorCode::ChunkExtractionFailed: return "ChunkExtractionFailed";
    case ErrorCode::TemplateError: return "TemplateError";
    case ErrorCode::StorageIO: return "StorageIO";
    case ErrorCode::UnknownId: return "UnknownId";
    case ErrorCode::Conflict: return "Conflict";
    case ErrorCode::BadBinEdges: return "BadBinEdges";
    case ErrorCode::MissingProperty: return "MissingProperty";
    case ErrorCode::DatasetTooSmall: return "DatasetTooSmall";
    case ErrorCode::DegenerateTarget: return "DegenerateTarget";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::ModelUnavailable: return "ModelUnavailable";
    case ErrorCode::EmptyProposal: return "EmptyProposal";
    case ErrorCode::BindFailure: return "BindFailure";
    case ErrorCode::StoreOpenFailure: return "StoreOpenFailure";
    case ErrorCode::Unauthorized: return "Unauthorized";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

namespace {

std::string digest_hex(const void* data, std::size_t size) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, size, md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::InvalidArgument, "sha256 digest failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xf]);
  }
  return out;
}

}  // namespace

std::string sha256_hex(std::string_view data) { return digest_hex(data.data(), data.size()); }

std::string sha256_hex(std::span<const std::uint8_t> data) { return digest_hex(data.data(), data.size()); }

std::string base64_encode(std::span<const std::uint8_t> data) {
  std::string out(4 * ((data.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data.data(),
                                static_cast<int>(data.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::size_t utf8_floor(std::string_view s, std::size_t pos) {
  if (pos >= s.size()) return s.size();
  while (pos > 0 && (static_cast<unsigned char>(s[pos]) & 0xC0) == 0x80) --pos;
  return pos;
}

double round_sig(double x, int digits) {
  if (x == 0.0 || !std::isfinite(x)) return x;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*e", digits - 1, x);
  return std::strtod(buf, nullptr);
}

std::string format_shortest(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, end);
}

std::string format_trimmed(double x, int decimals) {
  std::string s = fmt::format("{:.{}f}", x, decimals);
  if (s.find('.') != std::string::npos) {
    while (!s.empty() && s.back() == '0') s.pop_back();
    if (!s.empty() && s.back() == '.') s.pop_back();
  }
  if (s == "-0") s = "0";
  return s;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + path.string(), {{"path", path.string()}});
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Bytes read_binary_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + path.string(), {{"path", path.string()}});
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::StorageIO, "cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw Error(ErrorCode::StorageIO, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::StorageIO, "rename failed for " + path.string() + ": " + ec.message());
}

std::vector<nlohmann::json> parse_jsonl(std::string_view text) {
  std::vector<nlohmann::json> rows;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    auto line = trim(text.substr(start, end - start));
    if (!line.empty()) {
      try {
        rows.push_back(nlohmann::json::parse(line));
      } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::InvalidArgument, fmt::format("malformed JSONL at line {}: {}", line_no, e.what()),
                    {{"line", line_no}});
      }
    }
    start = end + 1;
  }
  return rows;
}

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) { return parse_jsonl(read_text_file(path)); }

std::string to_jsonl(const std::vector<nlohmann::json>& rows) {
  std::string out;
  for (const auto& row : rows) {
    out += row.dump();
    out += '\n';
  }
  return out;
}

std::string format_utc(std::int64_t unix_seconds) {
  std::time_t t = static_cast<std::time_t>(unix_seconds);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::int64_t parse_utc(std::string_view iso) {
  std::tm tm{};
  std::istringstream in{std::string(iso)};
  in >> std::get_time(&tm, "%Y-%m-%dT%H:%M:%S");
  if (in.fail()) throw Error(ErrorCode::InvalidArgument, "bad UTC timestamp: " + std::string(iso));
  return static_cast<std::int64_t>(timegm(&tm));
}

std::int64_t now_unix_seconds() {
  return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (auto& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

std::string_view trim(std::string_view s) {
  const char* ws = " \t\r\n";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

}  // namespace dive
