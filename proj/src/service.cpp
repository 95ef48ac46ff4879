#include "dive/service.hpp"

#include <charconv>
#include <cmath>
#include <limits>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "dive/designer.hpp"
#include "dive/evaluate.hpp"

namespace dive {

using nlohmann::json;

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownId:
    case ErrorCode::UnknownFigureId:
      return 404;
    case ErrorCode::Conflict:
      return 409;
    case ErrorCode::ValidationFailure:
    case ErrorCode::UnknownElement:
    case ErrorCode::UnbalancedGroup:
    case ErrorCode::EmptyFormula:
    case ErrorCode::SyntaxError:
    case ErrorCode::UnparseableQuantity:
    case ErrorCode::UnitKindMismatch:
    case ErrorCode::MissingProperty:
      return 422;
    case ErrorCode::ModelUnavailable:
    case ErrorCode::SchemaMismatch:
    case ErrorCode::BackendUnavailable:
      return 503;
    case ErrorCode::Unauthorized:
      return 401;
    case ErrorCode::InvalidArgument:
    case ErrorCode::BadBinEdges:
    case ErrorCode::TemplateError:
      return 400;
    default:
      return 500;
  }
}

json error_body(const Error& e) {
  return json{{"code", to_string(e.code())}, {"message", e.what()}, {"details", e.details()}};
}

namespace {

double number_param(const std::string& name, const std::string& text) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || end != text.data() + text.size() || !std::isfinite(v)) {
    throw Error(ErrorCode::InvalidArgument, fmt::format("query parameter {}='{}' is not a number", name, text),
                {{"parameter", name}});
  }
  return v;
}

std::optional<std::string> single(const std::multimap<std::string, std::string>& params, const std::string& key) {
  auto it = params.find(key);
  if (it == params.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    auto c = s.find(',', pos);
    auto part = trim(std::string_view(s).substr(pos, c == std::string::npos ? std::string::npos : c - pos));
    if (!part.empty()) out.emplace_back(part);
    if (c == std::string::npos) break;
    pos = c + 1;
  }
  return out;
}

std::optional<Range> range_param(const std::multimap<std::string, std::string>& params, const std::string& lo,
                                 const std::string& hi) {
  auto l = single(params, lo);
  auto h = single(params, hi);
  if (!l && !h) return std::nullopt;
  constexpr double inf = std::numeric_limits<double>::infinity();
  return Range{l ? number_param(lo, *l) : -inf, h ? number_param(hi, *h) : inf};
}

json parse_body(const httplib::Request& req) {
  auto j = json::parse(req.body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::InvalidArgument, "request body must be a JSON object");
  return j;
}

std::vector<MaterialRecord> records_field(const json& body, const char* key) {
  auto it = body.find(key);
  if (it == body.end() || !it->is_array()) {
    throw Error(ErrorCode::InvalidArgument, fmt::format("\"{}\" must be an array of records", key));
  }
  std::vector<MaterialRecord> out;
  for (const auto& r : *it) out.push_back(record_from_json(r));
  return out;
}

RecordId id_param(const std::string& s) {
  RecordId id = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), id);
  if (ec != std::errc{} || end != s.data() + s.size()) {
    throw Error(ErrorCode::UnknownId, "no record with id " + s, {{"id", s}});
  }
  return id;
}

}  // namespace

QueryFilter filter_from_params(const std::multimap<std::string, std::string>& params) {
  QueryFilter f;
  if (auto v = single(params, "material_class")) {
    f.material_class = parse_material_class(*v);
    if (!f.material_class) throw Error(ErrorCode::InvalidArgument, "unknown material_class " + *v);
  }
  auto [lo, hi] = params.equal_range("element");
  for (auto it = lo; it != hi; ++it) {
    for (auto& e : split_commas(it->second)) f.elements.insert(e);
  }
  f.capacity = range_param(params, "cap_min", "cap_max");
  f.temperature = range_param(params, "t_min", "t_max");
  if (auto v = single(params, "doi")) f.doi = *v;
  if (auto v = single(params, "status")) {
    f.review_status = parse_review_status(*v);
    if (!f.review_status) throw Error(ErrorCode::InvalidArgument, "unknown review status " + *v);
  }
  if (auto v = single(params, "formula")) f.formula = *v;
  f.validate();
  return f;
}

ApiServer::ApiServer(ApiConfig config) : config_(std::move(config)) {
  if (config_.port < 0 || config_.port > 65535) throw Error(ErrorCode::InvalidArgument, "port out of range");
  if (config_.store_path.empty()) throw Error(ErrorCode::StoreOpenFailure, "no store path configured");
  store_ = std::make_unique<RecordStore>(config_.store_path);
  if (config_.model_path) model_ = PredictorModel::load(*config_.model_path);
  if (config_.design_backend) design_backends_ = make_backend_set(*config_.design_backend, load_http_config());
  server_ = std::make_unique<httplib::Server>();
  routes();
}

ApiServer::~ApiServer() { stop(); }

void ApiServer::routes() {
  auto& s = *server_;
  const int threads = std::max(1, config_.threads);
  s.new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
  // no SO_REUSEPORT, so a port already in use is a bind failure
  s.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });

  if (config_.static_dir && !s.set_mount_point("/", config_.static_dir->string())) {
    throw Error(ErrorCode::InvalidArgument, "static asset directory not found: " + config_.static_dir->string());
  }

  using Handler = std::function<json(const httplib::Request&)>;
  auto wrap = [this](Handler h, int ok_status = 200) {
    return [this, h = std::move(h), ok_status](const httplib::Request& req, httplib::Response& res) {
      json body;
      int status = ok_status;
      try {
        if (config_.auth_token) {
          const auto got = req.get_header_value("Authorization");
          if (got != "Bearer " + *config_.auth_token) throw Error(ErrorCode::Unauthorized, "missing or wrong bearer token");
        }
        body = h(req);
      } catch (const Error& e) {
        status = http_status(e.code());
        body = error_body(e);
      } catch (const std::exception& e) {
        status = 500;
        body = json{{"code", "Internal"}, {"message", e.what()}, {"details", json::object()}};
      }
      res.status = status;
      res.set_content(body.dump(), "application/json");
    };
  };

  s.Get("/records", wrap([this](const httplib::Request& req) {
          json out = json::array();
          for (const auto& r : store_->query(filter_from_params(req.params))) out.push_back(to_json(r));
          return out;
        }));
  s.Get(R"(/records/([^/]+))", wrap([this](const httplib::Request& req) {
          return to_json(store_->get(id_param(req.matches[1])));
        }));
  s.Get("/review/queue", wrap([this](const httplib::Request&) {
          json out = json::array();
          for (const auto& r : store_->review_queue()) {
            out.push_back({{"record", to_json(r)},
                           {"context", store_->descriptive_context(r.record.provenance.doi, r.record.provenance.figure_id)}});
          }
          return out;
        }));
  s.Post(R"(/review/([^/]+))", wrap([this](const httplib::Request& req) {
           const auto id = id_param(req.matches[1]);
           const auto body = parse_body(req);
           auto action = body.contains("action") && body["action"].is_string()
                             ? parse_review_action(body["action"].get<std::string>())
                             : std::nullopt;
           if (!action) throw Error(ErrorCode::InvalidArgument, "action must be accept, correct or reject");
           auto reviewer = body.value("reviewer", json()).is_string() ? body["reviewer"].get<std::string>() : "";
           if (reviewer.empty()) throw Error(ErrorCode::InvalidArgument, "reviewer must be a non-empty string");
           ReviewAction a{*action, std::nullopt};
           if (auto it = body.find("record"); it != body.end() && !it->is_null()) a.correction = *it;
           return to_json(store_->set_review(id, a, reviewer));
         }));
  s.Get("/stats/histogram", wrap([this](const httplib::Request& req) {
          auto edges_text = single(req.params, "edges");
          if (!edges_text) throw Error(ErrorCode::BadBinEdges, "edges parameter is required");
          std::vector<double> edges;
          for (const auto& e : split_commas(*edges_text)) edges.push_back(number_param("edges", e));
          return to_json(store_->capacity_histogram(edges));
        }));
  s.Get("/stats/elements", wrap([this](const httplib::Request& req) {
          auto lo = single(req.params, "lo");
          auto hi = single(req.params, "hi");
          if (!lo || !hi) throw Error(ErrorCode::InvalidArgument, "lo and hi are required");
          json out = json::array();
          for (const auto& [el, n] : store_->element_frequency(number_param("lo", *lo), number_param("hi", *hi))) {
            out.push_back({{"element", el}, {"count", n}});
          }
          return out;
        }));
  s.Get("/stats/dopants", wrap([this](const httplib::Request& req) {
          auto base = single(req.params, "base");
          if (!base) throw Error(ErrorCode::InvalidArgument, "base is required");
          std::size_t k = 5;
          if (auto kt = single(req.params, "k")) {
            const double kv = number_param("k", *kt);
            if (kv < 1 || kv != std::floor(kv)) throw Error(ErrorCode::InvalidArgument, "k must be a positive integer");
            k = static_cast<std::size_t>(kv);
          }
          json out = json::array();
          for (const auto& d : store_->dopant_analysis(*base, k)) out.push_back(to_json(d));
          return out;
        }));
  s.Post("/predict", wrap([this](const httplib::Request& req) {
           if (!model_) throw Error(ErrorCode::ModelUnavailable, "no predictor model is loaded");
           const auto body = parse_body(req);
           if (!body.contains("formula") || !body["formula"].is_string()) {
             throw Error(ErrorCode::InvalidArgument, "formula must be a string");
           }
           const auto formula = body["formula"].get<std::string>();
           const auto c = parse_formula(formula);
           return json{{"formula", formula},
                       {"canonical", canonical_formula(c)},
                       {"predicted_capacity", model_->predict(c)},
                       {"model_digest", model_->digest()}};
         }));
  s.Post("/design", wrap([this](const httplib::Request& req) {
           if (!model_) throw Error(ErrorCode::ModelUnavailable, "no predictor model is loaded");
           const auto body = parse_body(req);
           if (!body.contains("spec")) throw Error(ErrorCode::InvalidArgument, "spec is required");
           const auto spec = design_spec_from_json(body["spec"]);
           const auto engine_name = body.value("engine", std::string("fallback"));
           const auto& model = *model_;
           CapacityFn fn = [&model](const Composition& c) { return model.predict(c); };
           if (engine_name == "fallback") {
             FallbackEngine engine;
             return to_json(run_design(spec, engine, fn, store_.get()));
           }
           if (engine_name == "llm") {
             if (!design_backends_) throw Error(ErrorCode::BackendUnavailable, "no design backend configured");
             LlmEngine engine(design_backends_->text);
             return to_json(run_design(spec, engine, fn, store_.get()));
           }
           throw Error(ErrorCode::InvalidArgument, "engine must be fallback or llm");
         }));
  s.Post("/score", wrap([](const httplib::Request& req) {
           const auto body = parse_body(req);
           FallbackEmbedder embedder;
           return to_json(score_extraction(records_field(body, "gold"), records_field(body, "pred"), embedder));
         }));
}

int ApiServer::start() {
  if (thread_.joinable()) return port_;
  if (config_.port == 0) {
    port_ = server_->bind_to_any_port(config_.bind_address);
  } else {
    port_ = server_->bind_to_port(config_.bind_address, config_.port) ? config_.port : -1;
  }
  if (port_ <= 0) {
    throw Error(ErrorCode::BindFailure, fmt::format("cannot bind {}:{}", config_.bind_address, config_.port),
                {{"address", config_.bind_address}, {"port", config_.port}});
  }
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  spdlog::info("serving on http://{}:{}", config_.bind_address, port_);
  return port_;
}

void ApiServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

void ApiServer::wait() {
  if (thread_.joinable()) thread_.join();
}

}  // namespace dive
