#include <gtest/gtest.h>

#include <fstream>
#include <thread>

#include "dive/error.hpp"
#include "dive/service.hpp"
#include "service_fixture.hpp"
#include "test_support.hpp"

using namespace dive;
using namespace dive::testing_support;
using nlohmann::json;

namespace {

struct Running {
  TempDir dir;
  std::unique_ptr<ApiServer> server;
  int port = 0;
  std::optional<PredictorModel> model;

  explicit Running(bool with_model = true, std::optional<std::string> token = std::nullopt) {
    build_service_store(dir / "store", data_dir());
    ApiConfig c;
    c.port = 0;
    c.store_path = dir / "store";
    if (with_model) {
      model = train_fixture_model(dir / "model.json");
      c.model_path = dir / "model.json";
    }
    c.auth_token = std::move(token);
    c.threads = 4;
    server = std::make_unique<ApiServer>(c);
    port = server->start();
  }
  httplib::Client client() const {
    httplib::Client cli("127.0.0.1", port);
    cli.set_read_timeout(30, 0);
    return cli;
  }
};

json body_of(const httplib::Result& r) { return json::parse(r->body); }

}  // namespace

TEST(Service, EveryEndpointMatchesLibrary) {
  Running s;
  auto cli = s.client();
  TempDir scratch;
  const auto checks = endpoint_checks(cli, s.dir / "store", scratch / "copy", *s.model);
  EXPECT_GE(checks.size(), 18u);
  for (const auto& c : checks) {
    EXPECT_EQ(c.status, c.want_status) << c.name << "\n" << c.got.dump();
    EXPECT_EQ(c.got, c.want) << c.name;
  }
  // non-trivial payloads, so the comparisons mean something
  EXPECT_GT(checks[0].got.size(), 10u);
  auto queue = cli.Get("/review/queue");
  bool has_context = false;
  for (const auto& item : body_of(queue)) has_context = has_context || !item.at("context").empty();
  EXPECT_TRUE(has_context);
}

TEST(Service, ConcurrentDoubleAccept) {
  Running s(false);
  const auto audit_before = s.server->store().audit().size();
  std::atomic<int> ok{0}, conflict{0}, other{0};
  for (int id = 1; id <= 5; ++id) {
    std::vector<std::thread> ts;
    for (int k = 0; k < 2; ++k) {
      ts.emplace_back([&, id, k] {
        auto cli = s.client();
        auto r = cli.Post("/review/" + std::to_string(id),
                          json{{"action", "accept"}, {"reviewer", "r" + std::to_string(k)}}.dump(), "application/json");
        if (r && r->status == 200) ++ok;
        else if (r && r->status == 409) ++conflict;
        else ++other;
      });
    }
    for (auto& t : ts) t.join();
  }
  EXPECT_EQ(ok.load(), 5);
  EXPECT_EQ(conflict.load(), 5);
  EXPECT_EQ(other.load(), 0);
  EXPECT_EQ(s.server->store().audit().size(), audit_before + 5);
}

TEST(Service, ErrorStatuses) {
  Running s(false);
  auto cli = s.client();
  auto expect = [&](const httplib::Result& r, int status, const std::string& code) {
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, status) << r->body;
    const auto b = json::parse(r->body);
    EXPECT_EQ(b.at("code"), code) << r->body;
    EXPECT_TRUE(b.contains("message"));
    EXPECT_TRUE(b.contains("details"));
  };
  expect(cli.Post("/predict", R"({"formula":"Mg2Fe"})", "application/json"), 503, "ModelUnavailable");
  expect(cli.Get("/records/999"), 404, "UnknownId");
  expect(cli.Get("/records/abc"), 404, "UnknownId");
  expect(cli.Get("/stats/histogram?edges=4,0"), 400, "BadBinEdges");
  expect(cli.Get("/stats/histogram"), 400, "BadBinEdges");
  expect(cli.Get("/records?cap_min=8&cap_max=4"), 400, "InvalidArgument");
  expect(cli.Get("/records?cap_min=lots"), 400, "InvalidArgument");
  expect(cli.Get("/records?material_class=gas"), 400, "InvalidArgument");
  expect(cli.Get("/stats/dopants?base=Qq5"), 422, "UnknownElement");
  expect(cli.Get("/stats/dopants?base=LaNi5&k=0"), 400, "InvalidArgument");
  expect(cli.Post("/review/1", R"({"action":"approve","reviewer":"a"})", "application/json"), 400, "InvalidArgument");
  expect(cli.Post("/review/1", R"({"action":"accept"})", "application/json"), 400, "InvalidArgument");
  expect(cli.Post("/review/1", "not json", "application/json"), 400, "InvalidArgument");
  auto raw = to_json(s.server->store().get(1).record);
  raw["capacity_wt_pct"] = "120 wt%";
  expect(cli.Post("/review/1", json{{"action", "correct"}, {"reviewer", "a"}, {"record", raw}}.dump(),
                  "application/json"),
         422, "ValidationFailure");
  expect(cli.Post("/score", R"({"gold": 1})", "application/json"), 400, "InvalidArgument");
  expect(cli.Post("/design", R"({"spec": {"element_pool": ["Mg"]}})", "application/json"), 503, "ModelUnavailable");
}

TEST(Service, ModelErrors) {
  Running s(true);
  auto cli = s.client();
  auto r = cli.Post("/predict", R"({"formula":"Mg2Xx"})", "application/json");
  EXPECT_EQ(r->status, 422);
  EXPECT_EQ(body_of(r).at("code"), "UnknownElement");
  r = cli.Post("/design", R"({"spec": {"element_pool": ["Mg", "Ni"]}, "engine": "llm"})", "application/json");
  EXPECT_EQ(r->status, 503);
  EXPECT_EQ(body_of(r).at("code"), "BackendUnavailable");
  r = cli.Post("/design", R"({"spec": {"element_pool": ["Mg", "Ni"]}, "engine": "magic"})", "application/json");
  EXPECT_EQ(r->status, 400);
  r = cli.Post("/design", R"({"spec": {"element_pool": []}})", "application/json");
  EXPECT_EQ(r->status, 400);
}

TEST(Service, BearerToken) {
  Running s(false, "sekrit");
  auto cli = s.client();
  auto r = cli.Get("/records");
  EXPECT_EQ(r->status, 401);
  EXPECT_EQ(body_of(r).at("code"), "Unauthorized");
  cli.set_bearer_token_auth("wrong");
  EXPECT_EQ(cli.Get("/records")->status, 401);
  cli.set_bearer_token_auth("sekrit");
  EXPECT_EQ(cli.Get("/records")->status, 200);
}

TEST(Service, BindAndOpenFailures) {
  Running s(false);
  ApiConfig c;
  c.port = s.port;
  c.store_path = s.dir / "store2";
  ApiServer clash(c);
  try {
    clash.start();
    FAIL() << "second bind succeeded";
  } catch (const dive::Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BindFailure);
  }
  std::ofstream(s.dir / "plainfile") << "x";
  ApiConfig bad;
  bad.port = 0;
  bad.store_path = s.dir / "plainfile";
  try {
    ApiServer no(bad);
    FAIL();
  } catch (const dive::Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::StoreOpenFailure);
  }
}

TEST(Service, StaticMount) {
  TempDir t;
  std::filesystem::create_directories(t / "www");
  std::ofstream(t / "www" / "index.html") << "<html>review</html>";
  ApiConfig c;
  c.port = 0;
  c.store_path = t / "store";
  c.static_dir = t / "www";
  ApiServer server(c);
  const int port = server.start();
  httplib::Client cli("127.0.0.1", port);
  auto r = cli.Get("/index.html");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->body, "<html>review</html>");
  EXPECT_EQ(cli.Get("/records")->body, "[]");
  server.stop();
  EXPECT_FALSE(cli.Get("/records"));
}

TEST(FilterParams, Parsing) {
  std::multimap<std::string, std::string> p = {{"element", "Mg,Ni"}, {"element", "Fe"}, {"cap_min", "4"},
                                               {"t_max", "600"},      {"status", "accepted"}};
  const auto f = filter_from_params(p);
  EXPECT_EQ(f.elements, (std::set<std::string>{"Fe", "Mg", "Ni"}));
  EXPECT_EQ(f.capacity->lo, 4.0);
  EXPECT_TRUE(std::isinf(f.capacity->hi));
  EXPECT_EQ(f.temperature->hi, 600.0);
  EXPECT_EQ(*f.review_status, ReviewStatus::Accepted);
  EXPECT_FALSE(f.doi.has_value());
  EXPECT_THROW(filter_from_params({{"status", "maybe"}}), dive::Error);
}

TEST(HttpStatus, Mapping) {
  EXPECT_EQ(http_status(ErrorCode::UnknownId), 404);
  EXPECT_EQ(http_status(ErrorCode::Conflict), 409);
  EXPECT_EQ(http_status(ErrorCode::ValidationFailure), 422);
  EXPECT_EQ(http_status(ErrorCode::ModelUnavailable), 503);
  EXPECT_EQ(http_status(ErrorCode::Unauthorized), 401);
  EXPECT_EQ(http_status(ErrorCode::InvalidArgument), 400);
  EXPECT_EQ(http_status(ErrorCode::StorageIO), 500);
  const auto b = error_body(dive::Error(ErrorCode::Conflict, "x", {{"id", 3}}));
  EXPECT_EQ(b, (json{{"code", "Conflict"}, {"message", "x"}, {"details", {{"id", 3}}}}));
}
