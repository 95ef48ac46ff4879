#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "dive/error.hpp"
#include "dive/gateway.hpp"
#include "dive/predictor.hpp"
#include "dive/store.hpp"

namespace httplib {
class Server;
}

namespace dive {

struct ApiConfig {
  std::string bind_address = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path store_path;
  std::optional<std::filesystem::path> model_path;
  std::optional<std::filesystem::path> static_dir;
  std::optional<std::string> auth_token;
  /// Backend for POST /design with "engine": "llm" ("cassette:<file>", ...).
  std::optional<std::string> design_backend;
  int threads = 8;
};

/// HTTP status for a library error code.
int http_status(ErrorCode code);
/// {code, message, details}
nlohmann::json error_body(const Error& e);

/// The JSON API over store, evaluate, predictor and designer:
///   GET  /records            material_class, element (repeat or comma list),
///                            cap_min, cap_max, t_min, t_max, doi, status, formula
///   GET  /records/{id}
///   GET  /review/queue
///   POST /review/{id}        {action, record?, reviewer}
///   GET  /stats/histogram    edges=0,4,8,12
///   GET  /stats/elements     lo, hi
///   GET  /stats/dopants      base, k
///   POST /predict            {formula}
///   POST /design             {spec, engine?: "fallback"|"llm"}
///   POST /score              {gold: [...], pred: [...]}
class ApiServer {
 public:
  explicit ApiServer(ApiConfig config);  // StoreOpenFailure
  ~ApiServer();
  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  /// Binds and starts serving on a background thread; returns the port.
  /// Throws BindFailure.
  int start();
  /// Stops accepting, lets in-flight requests finish, joins the thread.
  void stop();
  /// Blocks until the server stops.
  void wait();

  RecordStore& store() { return *store_; }
  const std::optional<PredictorModel>& model() const { return model_; }

 private:
  void routes();

  ApiConfig config_;
  std::unique_ptr<RecordStore> store_;
  std::optional<PredictorModel> model_;
  std::optional<BackendSet> design_backends_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

/// Parses GET /records query parameters into a filter (InvalidArgument).
QueryFilter filter_from_params(const std::multimap<std::string, std::string>& params);

}  // namespace dive
