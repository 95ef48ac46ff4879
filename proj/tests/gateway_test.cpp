#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <thread>

#include <httplib.h>

#include "dive/error.hpp"
#include "dive/gateway.hpp"
#include "dive/util.hpp"
#include "fixture_backend.hpp"
#include "stub_server.hpp"
#include "test_support.hpp"

using namespace dive;
using namespace dive::testing_support;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

ModelRequest text_request(const std::string& user, const std::string& system = "sys") {
  ModelRequest r;
  r.kind = RequestKind::Text;
  r.model_tag = "m";
  r.system_prompt = system;
  r.user_prompt = user;
  return r;
}

HttpConfig stub_config(const StubOpenAiServer& s) {
  HttpConfig c;
  c.base_url = s.base_url();
  c.api_key = "k-123";
  c.initial_backoff = std::chrono::milliseconds(1);
  c.max_backoff = std::chrono::milliseconds(4);
  c.timeout_seconds = 5;
  return c;
}

class CountingBackend final : public Backend {
 public:
  ModelResponse send(const ModelRequest& req) override {
    ++calls;
    return ModelResponse{"echo:" + req.user_prompt, std::nullopt, 7, "counting"};
  }
  std::string tag() const override { return "counting"; }
  int calls = 0;
};

}  // namespace

TEST(RequestDigest, CoversContentNotSampling) {
  auto a = text_request("hello");
  auto b = a;
  b.temperature = 0.7;
  b.max_tokens = 10;
  EXPECT_EQ(request_digest(a), request_digest(b));

  auto c = a;
  c.user_prompt = "hello!";
  EXPECT_NE(request_digest(a), request_digest(c));
  auto d = a;
  d.system_prompt = "other";
  EXPECT_NE(request_digest(a), request_digest(d));
  auto e = a;
  e.model_tag = "m2";
  EXPECT_NE(request_digest(a), request_digest(e));

  auto v1 = a;
  v1.kind = RequestKind::Vision;
  v1.images = {Bytes{1, 2, 3}};
  auto v2 = v1;
  v2.images = {Bytes{1, 2, 4}};
  EXPECT_NE(request_digest(v1), request_digest(v2));
  EXPECT_NE(request_digest(v1), request_digest(a));
  EXPECT_EQ(request_digest(a).size(), 64u);
}

TEST(RequestDigest, FieldBoundariesDoNotAlias) {
  // moving text across the system/user boundary must change the digest
  EXPECT_NE(request_digest(text_request("bc", "a")), request_digest(text_request("c", "ab")));
}

TEST(RequestDigest, NoCollisionsOnThousandRequests) {
  std::set<std::string> seen;
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> kind(0, 2);
  for (int i = 0; i < 1200; ++i) {
    ModelRequest r = text_request("prompt " + std::to_string(i), "system " + std::to_string(i % 7));
    r.model_tag = "model-" + std::to_string(i % 3);
    if (kind(rng) == 1) {
      r.kind = RequestKind::Vision;
      r.images = {Bytes{static_cast<std::uint8_t>(i % 256), static_cast<std::uint8_t>(i / 256)}};
    }
    seen.insert(request_digest(r));
  }
  EXPECT_EQ(seen.size(), 1200u);
}

TEST(ModelRequest, Validate) {
  auto r = text_request("x");
  EXPECT_NO_THROW(r.validate());
  r.kind = RequestKind::Vision;
  EXPECT_THROW(r.validate(), dive::Error);
  r.images = {Bytes{1}};
  EXPECT_NO_THROW(r.validate());
  r.kind = RequestKind::Text;
  EXPECT_THROW(r.validate(), dive::Error);
  auto t = text_request("x");
  t.temperature = -0.1;
  EXPECT_THROW(t.validate(), dive::Error);
}

TEST(Cassette, ReplayHitAndMiss) {
  TempDir t;
  const auto path = t / "c.jsonl";
  const auto req = text_request("hi");
  ModelResponse stored{"stored answer", std::nullopt, 12, "x"};
  std::ofstream(path) << json{{"digest", request_digest(req)}, {"request_summary", request_summary(req)},
                              {"response", to_json(stored)}}
                             .dump()
                      << "\n";
  CassetteBackend replay(path, CassetteMode::Replay);
  EXPECT_EQ(replay.size(), 1u);
  EXPECT_EQ(replay.send(req), stored);

  const auto other = text_request("unknown");
  try {
    replay.send(other);
    FAIL();
  } catch (const dive::Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::CassetteMiss);
    EXPECT_EQ(e.details().at("digest"), request_digest(other));
    EXPECT_NE(std::string(e.what()).find(request_digest(other)), std::string::npos);
  }
}

TEST(Cassette, ReplayMissingFile) {
  TempDir t;
  EXPECT_THROW(CassetteBackend(t / "none.jsonl", CassetteMode::Replay), dive::Error);
}

TEST(Cassette, RecordRoundTripThroughStubServer) {
  auto fixture = std::make_shared<FixtureBackend>();
  StubOpenAiServer server(fixture);
  TempDir t;
  const auto path = t / "rec.jsonl";
  auto http = std::make_shared<HttpBackend>(stub_config(server));
  const auto req = text_request("Caption: Pressure-composition isotherms at 298 K");
  ModelResponse first;
  {
    CassetteBackend rec(path, CassetteMode::Record, http);
    first = rec.send(req);
    EXPECT_EQ(*first.text, triage_answer("Pressure-composition isotherms at 298 K"));
    EXPECT_EQ(server.hits(), 1);
    // second identical call is served from the cassette
    EXPECT_EQ(rec.send(req), first);
    EXPECT_EQ(server.hits(), 1);
  }
  const auto lines = read_jsonl(path);
  ASSERT_EQ(lines.size(), 1u);
  EXPECT_EQ(lines[0].at("digest"), request_digest(req));
  EXPECT_TRUE(lines[0].contains("request_summary"));

  CassetteBackend replay(path, CassetteMode::Replay);
  EXPECT_EQ(replay.send(req), first);
  EXPECT_EQ(server.hits(), 1);
}

TEST(Cassette, ConcurrentRecordKeepsOneLinePerDigest) {
  TempDir t;
  auto upstream = std::make_shared<FixtureBackend>();
  CassetteBackend rec(t / "c.jsonl", CassetteMode::Record, upstream);
  std::vector<std::thread> threads;
  for (int k = 0; k < 8; ++k) {
    threads.emplace_back([&] {
      for (int i = 0; i < 20; ++i) rec.send(text_request("Caption: figure " + std::to_string(i)));
    });
  }
  for (auto& th : threads) th.join();
  const auto lines = read_jsonl(t / "c.jsonl");
  EXPECT_EQ(lines.size(), 20u);
  std::set<std::string> digests;
  for (const auto& l : lines) digests.insert(l.at("digest").get<std::string>());
  EXPECT_EQ(digests.size(), 20u);
}

TEST(Cassette, ReplayIsDeterministicUnderConcurrency) {
  TempDir t;
  std::vector<ModelRequest> reqs;
  for (int i = 0; i < 30; ++i) reqs.push_back(text_request("q" + std::to_string(i)));
  {
    CassetteBackend rec(t / "c.jsonl", CassetteMode::Record, std::make_shared<CountingBackend>());
    for (const auto& r : reqs) rec.send(r);
  }
  CassetteBackend replay(t / "c.jsonl", CassetteMode::Replay);
  std::vector<std::vector<ModelResponse>> got(6);
  std::vector<std::thread> threads;
  for (std::size_t k = 0; k < got.size(); ++k) {
    threads.emplace_back([&, k] {
      got[k].resize(reqs.size());
      // each thread walks the requests in a different order
      for (std::size_t i = 0; i < reqs.size(); ++i) {
        const auto r = (i + 7 * k) % reqs.size();
        const auto j = k % 2 ? reqs.size() - 1 - r : r;
        got[k][j] = replay.send(reqs[j]);
      }
    });
  }
  for (auto& th : threads) th.join();
  for (std::size_t k = 0; k < got.size(); ++k) {
    for (std::size_t i = 0; i < reqs.size(); ++i) EXPECT_EQ(*got[k][i].text, "echo:q" + std::to_string(i));
  }
}

TEST(Cassette, PassthroughNeverWrites) {
  TempDir t;
  auto upstream = std::make_shared<CountingBackend>();
  CassetteBackend pass(t / "p.jsonl", CassetteMode::Passthrough, upstream);
  pass.send(text_request("a"));
  pass.send(text_request("a"));
  EXPECT_EQ(upstream->calls, 2);
  EXPECT_FALSE(fs::exists(t / "p.jsonl"));
}

TEST(HttpBackend, SendsBearerAndParses) {
  StubOpenAiServer server(std::make_shared<FixtureBackend>());
  HttpBackend http(stub_config(server));
  auto req = text_request("Caption: XRD patterns of the as-cast alloy");
  const auto res = http.send(req);
  EXPECT_EQ(*res.text, R"({"class": "other", "confidence": 0.9})");
  EXPECT_GT(res.token_usage, 0);
  EXPECT_EQ(server.last_auth(), "Bearer k-123");
  const auto body = server.last_body();
  EXPECT_EQ(body.at("model"), "m");
  EXPECT_EQ(body.at("temperature"), 0.0);
  EXPECT_EQ(body.at("messages").at(0).at("role"), "system");
}

TEST(HttpBackend, VisionCarriesImagesAsDataUrls) {
  StubOpenAiServer server(std::make_shared<FixtureBackend>());
  HttpBackend http(stub_config(server));
  auto req = text_request("Figure fig1 caption: Temperature-programmed desorption\n");
  req.kind = RequestKind::Vision;
  const Bytes img = read_binary_file(data_dir() / "bundles" / "p2" / "figures" / "fig1.png");
  req.images = {img};
  http.send(req);
  const auto parts = server.last_body().at("messages").at(1).at("content");
  ASSERT_EQ(parts.size(), 2u);
  const std::string url = parts.at(1).at("image_url").at("url");
  EXPECT_TRUE(url.starts_with("data:image/png;base64,"));
  EXPECT_EQ(decode_data_url(url), img);
}

TEST(HttpBackend, Embeddings) {
  StubOpenAiServer server(std::make_shared<FixtureBackend>());
  HttpBackend http(stub_config(server));
  ModelRequest r;
  r.kind = RequestKind::Embed;
  r.model_tag = "e";
  r.user_prompt = "LaNi5 | interstitial";
  const auto res = http.send(r);
  ASSERT_TRUE(res.vector.has_value());
  EXPECT_EQ(*res.vector, fallback_embed("LaNi5 | interstitial"));
}

TEST(HttpBackend, RetriesRateLimitsAndServerErrors) {
  StubOpenAiServer server(std::make_shared<FixtureBackend>());
  server.queue_failures({{429, "0"}, {500, ""}, {503, ""}});
  HttpBackend http(stub_config(server));
  const auto res = http.send(text_request("Caption: Discharge capacity"));
  EXPECT_EQ(*res.text, triage_answer("Discharge capacity"));
  EXPECT_EQ(server.hits(), 4);
}

TEST(HttpBackend, GivesUpAfterFiveAttempts) {
  StubOpenAiServer server(std::make_shared<FixtureBackend>());
  server.queue_failures(std::vector<StubFailure>(6, StubFailure{429, ""}));
  HttpBackend http(stub_config(server));
  try {
    http.send(text_request("x"));
    FAIL();
  } catch (const dive::Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::RateLimited);
  }
  EXPECT_EQ(server.hits(), 5);
}

TEST(HttpBackend, ClientErrorsAreNotRetried) {
  StubOpenAiServer server(std::make_shared<FixtureBackend>());
  server.queue_failures({{400, ""}});
  HttpBackend http(stub_config(server));
  try {
    http.send(text_request("x"));
    FAIL();
  } catch (const dive::Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::HttpStatus);
    EXPECT_EQ(e.details().at("status"), 400);
  }
  EXPECT_EQ(server.hits(), 1);
}

TEST(HttpBackend, MalformedBodyAndTimeout) {
  httplib::Server raw;
  raw.Post("/v1/chat/completions", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"choices": []})", "application/json");
  });
  raw.Post("/slow/chat/completions", [](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(2500));
    res.set_content("{}", "application/json");
  });
  const int port = raw.bind_to_any_port("127.0.0.1");
  std::thread th([&] { raw.listen_after_bind(); });
  raw.wait_until_ready();

  HttpConfig c;
  c.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
  c.max_attempts = 1;
  try {
    HttpBackend(c).send(text_request("x"));
    ADD_FAILURE();
  } catch (const dive::Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MalformedResponse);
  }

  c.base_url = "http://127.0.0.1:" + std::to_string(port) + "/slow";
  c.timeout_seconds = 1;
  try {
    HttpBackend(c).send(text_request("x"));
    ADD_FAILURE();
  } catch (const dive::Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Timeout);
  }
  raw.stop();
  th.join();
}

TEST(HttpBackend, UnreachableHost) {
  HttpConfig c;
  c.base_url = "http://127.0.0.1:1/v1";
  c.max_attempts = 2;
  c.initial_backoff = std::chrono::milliseconds(1);
  try {
    HttpBackend(c).send(text_request("x"));
    FAIL();
  } catch (const dive::Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BackendUnavailable);
  }
}

TEST(HttpConfig, FileThenEnvironment) {
  TempDir t;
  std::ofstream(t / "c.json") << R"({"api_base": "http://file/v1", "api_key": "f", "model_text": "ft", "max_attempts": 3})";
  ::setenv("DIVE_MODEL_TEXT", "from-env", 1);
  ::unsetenv("DIVE_API_BASE");
  const auto c = load_http_config(t / "c.json");
  ::unsetenv("DIVE_MODEL_TEXT");
  EXPECT_EQ(c.base_url, "http://file/v1");
  EXPECT_EQ(c.api_key, "f");
  EXPECT_EQ(c.model_text, "from-env");
  EXPECT_EQ(c.max_attempts, 3);
}

TEST(BackendSet, Specs) {
  TempDir t;
  std::ofstream(t / "c.jsonl") << "";
  const auto set = make_backend_set("cassette:" + (t / "c.jsonl").string(), HttpConfig{});
  EXPECT_EQ(set.text.model_tag, "dive-text");
  EXPECT_EQ(set.vision.model_tag, "dive-vision");
  EXPECT_EQ(&set.triage_endpoint(), &set.text);
  EXPECT_THROW(make_backend_set("ftp:x", HttpConfig{}), dive::Error);
}

TEST(FallbackEmbed, Properties) {
  EXPECT_EQ(fallback_embed("abc"), fallback_embed("abc"));
  const auto zero = fallback_embed("");
  ASSERT_EQ(zero.size(), kFallbackEmbeddingDim);
  for (float x : zero) EXPECT_EQ(x, 0.0f);
  EXPECT_EQ(fallback_embed("ab"), zero);
  // characters outside the kept set are dropped before the grams
  EXPECT_EQ(fallback_embed("A#B$C"), fallback_embed("abc"));
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    std::string s;
    for (int k = 0; k < 3 + i % 40; ++k) s.push_back(static_cast<char>('a' + rng() % 26));
    double n = 0;
    for (float x : fallback_embed(s)) n += static_cast<double>(x) * x;
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
  }
}

TEST(FallbackEmbed, MatchesIndependentComputation) {
  // values from a separate Python implementation of the same recipe
  EXPECT_NEAR(cosine(fallback_embed("LaNi5"), fallback_embed("LaNi5 alloy")), 0.5773502691896257, 1e-6);
  EXPECT_NEAR(cosine(fallback_embed("LaNi5"), fallback_embed("MgH2")), 0.0, 1e-12);
  const auto e = fallback_embed("abcd");
  EXPECT_NEAR(e[75], 0.7071067811865475, 1e-6);
  EXPECT_NEAR(e[98], 0.7071067811865475, 1e-6);
}

TEST(Cosine, ZeroAndMismatch) {
  EXPECT_EQ(cosine(fallback_embed(""), fallback_embed("abc")), 0.0);
  EXPECT_THROW(cosine({1.0f}, {1.0f, 2.0f}), dive::Error);
}
