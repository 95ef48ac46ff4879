#include "dive/gateway.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "dive/error.hpp"

namespace dive {

using nlohmann::json;
namespace fs = std::filesystem;

std::string_view to_string(RequestKind k) {
  switch (k) {
    case RequestKind::Text: return "text";
    case RequestKind::Vision: return "vision";
    case RequestKind::Embed: return "embed";
  }
  return "text";
}

void ModelRequest::validate() const {
  if ((kind == RequestKind::Vision) != !images.empty()) {
    throw Error(ErrorCode::InvalidArgument, "images must be present exactly for vision requests");
  }
  if (!(temperature >= 0.0)) throw Error(ErrorCode::InvalidArgument, "temperature must be >= 0");
}

json to_json(const ModelResponse& r) {
  json j = json::object();
  if (r.text) j["text"] = *r.text;
  if (r.vector) j["vector"] = *r.vector;
  j["token_usage"] = r.token_usage;
  j["backend_tag"] = r.backend_tag;
  return j;
}

ModelResponse response_from_json(const json& j) {
  ModelResponse r;
  try {
    if (auto it = j.find("text"); it != j.end()) r.text = it->get<std::string>();
    if (auto it = j.find("vector"); it != j.end()) r.vector = it->get<std::vector<float>>();
    r.token_usage = j.value("token_usage", std::int64_t{0});
    r.backend_tag = j.value("backend_tag", std::string{});
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedResponse, std::string("bad stored response: ") + e.what());
  }
  if (r.text.has_value() == r.vector.has_value()) {
    throw Error(ErrorCode::MalformedResponse, "response must carry exactly one of text/vector");
  }
  return r;
}

json request_summary(const ModelRequest& req) {
  json images = json::array();
  for (const auto& img : req.images) images.push_back(sha256_hex(img));
  return json{{"kind", to_string(req.kind)},
              {"model_tag", req.model_tag},
              {"system_prompt", req.system_prompt},
              {"user_prompt", req.user_prompt},
              {"image_digests", images}};
}

std::string request_digest(const ModelRequest& req) { return sha256_hex(request_summary(req).dump()); }

// ---------------------------------------------------------------------------
// HTTP backend

namespace {

std::optional<std::string> env(const char* name) {
  if (const char* v = std::getenv(name); v != nullptr && *v != '\0') return std::string(v);
  return std::nullopt;
}

bool retryable_status(int status) { return status == 429 || status >= 500; }

}  // namespace

HttpConfig load_http_config(const std::optional<fs::path>& file) {
  HttpConfig c;
  if (file) {
    json j;
    try {
      j = json::parse(read_text_file(*file));
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::InvalidArgument, "bad gateway config " + file->string() + ": " + e.what());
    }
    c.base_url = j.value("api_base", c.base_url);
    c.api_key = j.value("api_key", c.api_key);
    c.model_text = j.value("model_text", c.model_text);
    c.model_vision = j.value("model_vision", c.model_vision);
    c.model_embed = j.value("model_embed", c.model_embed);
    c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
    c.max_attempts = j.value("max_attempts", c.max_attempts);
    c.initial_backoff = std::chrono::milliseconds(j.value("initial_backoff_ms", c.initial_backoff.count()));
  }
  if (auto v = env("DIVE_API_BASE")) c.base_url = *v;
  if (auto v = env("DIVE_API_KEY")) c.api_key = *v;
  if (auto v = env("DIVE_MODEL_TEXT")) c.model_text = *v;
  if (auto v = env("DIVE_MODEL_VISION")) c.model_vision = *v;
  if (auto v = env("DIVE_MODEL_EMBED")) c.model_embed = *v;
  return c;
}

HttpBackend::HttpBackend(HttpConfig config) : config_(std::move(config)) {
  auto scheme_end = config_.base_url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCode::InvalidArgument, "API base must include a scheme: " + config_.base_url);
  }
  auto path_start = config_.base_url.find('/', scheme_end + 3);
  scheme_host_port_ = config_.base_url.substr(0, path_start);
  path_prefix_ = path_start == std::string::npos ? "" : config_.base_url.substr(path_start);
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

ModelResponse HttpBackend::send(const ModelRequest& req) {
  req.validate();
  json body;
  std::string path;
  if (req.kind == RequestKind::Embed) {
    path = path_prefix_ + "/embeddings";
    body = {{"model", req.model_tag}, {"input", req.user_prompt}};
  } else {
    path = path_prefix_ + "/chat/completions";
    json messages = json::array();
    if (!req.system_prompt.empty()) messages.push_back({{"role", "system"}, {"content", req.system_prompt}});
    if (req.images.empty()) {
      messages.push_back({{"role", "user"}, {"content", req.user_prompt}});
    } else {
      json parts = json::array({{{"type", "text"}, {"text", req.user_prompt}}});
      for (const auto& img : req.images) {
        const bool jpeg = img.size() >= 2 && img[0] == 0xFF && img[1] == 0xD8;
        parts.push_back({{"type", "image_url"},
                         {"image_url",
                          {{"url", fmt::format("data:image/{};base64,{}", jpeg ? "jpeg" : "png", base64_encode(img))}}}});
      }
      messages.push_back({{"role", "user"}, {"content", parts}});
    }
    body = {{"model", req.model_tag},
            {"messages", messages},
            {"max_tokens", req.max_tokens},
            {"temperature", req.temperature}};
  }
  const std::string payload = body.dump();

  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

  auto backoff = config_.initial_backoff;
  const int attempts = std::max(1, config_.max_attempts);
  for (int attempt = 1;; ++attempt) {
    httplib::Client client(scheme_host_port_);
    client.set_connection_timeout(config_.timeout_seconds, 0);
    client.set_read_timeout(config_.timeout_seconds, 0);
    client.set_write_timeout(config_.timeout_seconds, 0);
    auto res = client.Post(path, headers, payload, "application/json");

    std::optional<Error> failure;
    std::chrono::milliseconds wait = backoff;
    if (!res) {
      const auto err = res.error();
      if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read || err == httplib::Error::Write) {
        failure.emplace(ErrorCode::Timeout, fmt::format("{} {}: {}", scheme_host_port_, path, httplib::to_string(err)));
      } else {
        failure.emplace(ErrorCode::BackendUnavailable,
                        fmt::format("{} {}: {}", scheme_host_port_, path, httplib::to_string(err)));
      }
    } else if (res->status == 429) {
      failure.emplace(ErrorCode::RateLimited, "rate limited by " + scheme_host_port_, json{{"status", 429}});
      if (res->has_header("Retry-After")) {
        char* end = nullptr;
        const auto header = res->get_header_value("Retry-After");
        double secs = std::strtod(header.c_str(), &end);
        if (end != header.c_str() && secs >= 0) {
          wait = std::min(config_.max_backoff, std::chrono::milliseconds(static_cast<long>(secs * 1000)));
        }
      }
    } else if (res->status != 200) {
      failure.emplace(ErrorCode::HttpStatus, fmt::format("HTTP {} from {}{}", res->status, scheme_host_port_, path),
                      json{{"status", res->status}, {"body", res->body.substr(0, 512)}});
      if (!retryable_status(res->status)) throw *failure;
    }

    if (!failure) {
      json j;
      try {
        j = json::parse(res->body);
        ModelResponse out;
        out.backend_tag = tag();
        if (auto u = j.find("usage"); u != j.end() && u->is_object()) {
          out.token_usage = u->value("total_tokens", std::int64_t{0});
        }
        if (req.kind == RequestKind::Embed) {
          out.vector = j.at("data").at(0).at("embedding").get<std::vector<float>>();
        } else {
          const auto& content = j.at("choices").at(0).at("message").at("content");
          out.text = content.is_null() ? std::string{} : content.get<std::string>();
        }
        return out;
      } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedResponse, std::string("unexpected response shape: ") + e.what(),
                    json{{"body", res->body.substr(0, 512)}});
      }
    }

    if (attempt >= attempts) throw *failure;
    spdlog::warn("model call failed ({}), retry {}/{} in {} ms", failure->what(), attempt, attempts - 1,
                 wait.count());
    std::this_thread::sleep_for(wait);
    backoff = std::min(config_.max_backoff, backoff * 2);
  }
}

// ---------------------------------------------------------------------------
// Cassette backend

CassetteBackend::CassetteBackend(fs::path path, CassetteMode mode, std::shared_ptr<Backend> upstream)
    : path_(std::move(path)), mode_(mode), upstream_(std::move(upstream)) {
  if (mode_ != CassetteMode::Replay && !upstream_) {
    throw Error(ErrorCode::InvalidArgument, "record/passthrough cassette needs an upstream backend");
  }
  if (mode_ == CassetteMode::Passthrough) return;
  if (!fs::exists(path_)) {
    if (mode_ == CassetteMode::Replay) throw Error(ErrorCode::MissingFile, "no cassette at " + path_.string());
    return;
  }
  for (const auto& line : read_jsonl(path_)) {
    try {
      entries_.emplace(line.at("digest").get<std::string>(), response_from_json(line.at("response")));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::MalformedResponse, "bad cassette entry in " + path_.string() + ": " + e.what());
    }
  }
}

std::size_t CassetteBackend::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

bool CassetteBackend::contains(const std::string& digest) const {
  std::shared_lock lock(mutex_);
  return entries_.count(digest) != 0;
}

ModelResponse CassetteBackend::send(const ModelRequest& req) {
  req.validate();
  if (mode_ == CassetteMode::Passthrough) return upstream_->send(req);

  const auto digest = request_digest(req);
  if (mode_ == CassetteMode::Replay) {
    auto it = entries_.find(digest);
    if (it == entries_.end()) {
      throw Error(ErrorCode::CassetteMiss, "cassette " + path_.string() + " has no entry for " + digest,
                  json{{"digest", digest}});
    }
    return it->second;
  }

  {
    std::shared_lock lock(mutex_);
    if (auto it = entries_.find(digest); it != entries_.end()) return it->second;
  }
  auto response = upstream_->send(req);
  std::unique_lock lock(mutex_);
  if (auto it = entries_.find(digest); it != entries_.end()) return it->second;
  std::ofstream out(path_, std::ios::app | std::ios::binary);
  if (!out) throw Error(ErrorCode::StorageIO, "cannot append to cassette " + path_.string());
  out << json{{"digest", digest}, {"request_summary", request_summary(req)}, {"response", to_json(response)}}.dump()
      << '\n';
  out.flush();
  if (!out) throw Error(ErrorCode::StorageIO, "short write to cassette " + path_.string());
  entries_.emplace(digest, response);
  return response;
}

ModelResponse ModelEndpoint::send(ModelRequest req) const {
  if (!backend) throw Error(ErrorCode::BackendUnavailable, "no backend configured for " + model_tag);
  req.model_tag = model_tag;
  return backend->send(req);
}

BackendSet make_backend_set(std::string_view spec, const HttpConfig& config) {
  std::shared_ptr<Backend> backend;
  if (spec.starts_with("cassette:")) {
    backend = std::make_shared<CassetteBackend>(fs::path(spec.substr(9)), CassetteMode::Replay);
  } else if (spec.starts_with("record:")) {
    backend = std::make_shared<CassetteBackend>(fs::path(spec.substr(7)), CassetteMode::Record,
                                                std::make_shared<HttpBackend>(config));
  } else if (spec == "http") {
    backend = std::make_shared<HttpBackend>(config);
  } else {
    throw Error(ErrorCode::InvalidArgument,
                fmt::format("unknown backend spec '{}' (expected cassette:<file>, record:<file> or http)", spec));
  }
  BackendSet set{{backend, config.model_text}, {backend, config.model_vision}, std::nullopt,
                 ModelEndpoint{backend, config.model_embed}};
  return set;
}

// ---------------------------------------------------------------------------
// Embeddings

std::vector<float> fallback_embed(std::string_view s) {
  std::string kept;
  kept.reserve(s.size());
  for (char c : to_lower_ascii(s)) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == ' ' || c == '.' || c == '%' ||
                    c == '(' || c == ')' || c == '+' || c == '-';
    if (ok) kept.push_back(c);
  }
  std::vector<double> counts(kFallbackEmbeddingDim, 0.0);
  for (std::size_t i = 0; i + 3 <= kept.size(); ++i) {
    counts[fnv1a64(std::string_view(kept).substr(i, 3)) % kFallbackEmbeddingDim] += 1.0;
  }
  double norm = 0.0;
  for (double c : counts) norm += c * c;
  norm = std::sqrt(norm);
  std::vector<float> out(kFallbackEmbeddingDim, 0.0f);
  if (norm == 0.0) return out;
  for (std::size_t i = 0; i < counts.size(); ++i) out[i] = static_cast<float>(counts[i] / norm);
  return out;
}

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size()) throw Error(ErrorCode::InvalidArgument, "embedding dimensions differ");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

std::vector<float> BackendEmbedder::embed(std::string_view text) const {
  ModelRequest req;
  req.kind = RequestKind::Embed;
  req.user_prompt = std::string(text);
  auto r = endpoint_.send(std::move(req));
  if (!r.vector) throw Error(ErrorCode::MalformedResponse, "embedding response carried no vector");
  return *r.vector;
}

}  // namespace dive
