#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dive/util.hpp"

namespace dive {

enum class RequestKind { Text, Vision, Embed };
std::string_view to_string(RequestKind k);

struct ModelRequest {
  RequestKind kind = RequestKind::Text;
  std::string model_tag;
  std::string system_prompt;
  std::string user_prompt;
  std::vector<Bytes> images;  // vision only
  int max_tokens = 4096;
  double temperature = 0.0;

  /// images non-empty iff kind == Vision; temperature >= 0.
  void validate() const;
};

struct ModelResponse {
  std::optional<std::string> text;
  std::optional<std::vector<float>> vector;
  std::int64_t token_usage = 0;
  std::string backend_tag;

  friend bool operator==(const ModelResponse&, const ModelResponse&) = default;
};

nlohmann::json to_json(const ModelResponse& r);
ModelResponse response_from_json(const nlohmann::json& j);

/// Hex sha256 of the canonicalized request: kind, model tag, both prompts and
/// the sha256 of every image. Temperature and max_tokens do not participate.
std::string request_digest(const ModelRequest& req);
nlohmann::json request_summary(const ModelRequest& req);

class Backend {
 public:
  virtual ~Backend() = default;
  virtual ModelResponse send(const ModelRequest& req) = 0;
  virtual std::string tag() const = 0;
};

struct HttpConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string api_key;
  std::string model_text = "dive-text";
  std::string model_vision = "dive-vision";
  std::string model_embed = "dive-embed";
  int timeout_seconds = 120;
  int max_attempts = 5;
  std::chrono::milliseconds initial_backoff{500};
  std::chrono::milliseconds max_backoff{8000};
};

/// Reads an optional JSON config file (keys: api_base, api_key, model_text,
/// model_vision, model_embed, timeout_seconds, max_attempts,
/// initial_backoff_ms), then applies DIVE_API_BASE, DIVE_API_KEY,
/// DIVE_MODEL_TEXT, DIVE_MODEL_VISION and DIVE_MODEL_EMBED.
HttpConfig load_http_config(const std::optional<std::filesystem::path>& file = std::nullopt);

/// Chat-completions / embeddings client with bounded exponential backoff on
/// 429, 5xx and transport failures.
class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(HttpConfig config);
  ModelResponse send(const ModelRequest& req) override;
  std::string tag() const override { return "http:" + config_.base_url; }

 private:
  HttpConfig config_;
  std::string scheme_host_port_;
  std::string path_prefix_;
};

enum class CassetteMode { Replay, Record, Passthrough };

/// Record/replay log of model calls, one JSONL line per entry:
///   {"digest": hex, "request_summary": {...}, "response": {...}}
///
/// Replay never touches the network and is read-only after construction.
/// Record returns stored responses on hits and appends misses (fetched from
/// `upstream`) through a single writer.
class CassetteBackend final : public Backend {
 public:
  CassetteBackend(std::filesystem::path path, CassetteMode mode, std::shared_ptr<Backend> upstream = nullptr);

  ModelResponse send(const ModelRequest& req) override;
  std::string tag() const override { return "cassette:" + path_.filename().string(); }

  std::size_t size() const;
  bool contains(const std::string& digest) const;
  CassetteMode mode() const { return mode_; }

 private:
  std::filesystem::path path_;
  CassetteMode mode_;
  std::shared_ptr<Backend> upstream_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, ModelResponse> entries_;
};

/// A backend plus the model tag to request from it.
struct ModelEndpoint {
  std::shared_ptr<Backend> backend;
  std::string model_tag;

  /// Stamps `model_tag` onto the request and sends it.
  ModelResponse send(ModelRequest req) const;
};

struct BackendSet {
  ModelEndpoint text;
  ModelEndpoint vision;
  std::optional<ModelEndpoint> triage;  // defaults to `text`
  std::optional<ModelEndpoint> embed;

  const ModelEndpoint& triage_endpoint() const { return triage ? *triage : text; }
};

/// Builds a backend set from a CLI spec: "cassette:<file>" (replay),
/// "record:<file>" (record through HTTP), or "http".
BackendSet make_backend_set(std::string_view spec, const HttpConfig& config);

inline constexpr std::size_t kFallbackEmbeddingDim = 256;

/// Deterministic character-trigram embedding: lower-case, keep [a-z0-9 .%()+-],
/// hash every 3-gram with FNV-1a 64, count into 256 buckets, L2-normalize.
/// Inputs with no trigram map to the zero vector.
std::vector<float> fallback_embed(std::string_view s);

double cosine(const std::vector<float>& a, const std::vector<float>& b);

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::vector<float> embed(std::string_view text) const = 0;
  virtual std::string tag() const = 0;
};

class FallbackEmbedder final : public Embedder {
 public:
  std::vector<float> embed(std::string_view text) const override { return fallback_embed(text); }
  std::string tag() const override { return "fallback-trigram-256"; }
};

class BackendEmbedder final : public Embedder {
 public:
  explicit BackendEmbedder(ModelEndpoint endpoint) : endpoint_(std::move(endpoint)) {}
  std::vector<float> embed(std::string_view text) const override;
  std::string tag() const override { return "backend:" + endpoint_.model_tag; }

 private:
  ModelEndpoint endpoint_;
};

}  // namespace dive
