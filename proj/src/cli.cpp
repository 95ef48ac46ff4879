#include "dive/cli.hpp"

#include <csignal>
#include <cstdlib>
#include <future>
#include <iostream>
#include <limits>
#include <pthread.h>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "dive/composition.hpp"
#include "dive/corpus.hpp"
#include "dive/designer.hpp"
#include "dive/evaluate.hpp"
#include "dive/pipeline.hpp"
#include "dive/predictor.hpp"
#include "dive/service.hpp"
#include "dive/store.hpp"
#include "dive/util.hpp"

namespace dive::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::vector<MaterialRecord> read_records(const fs::path& path) {
  std::vector<MaterialRecord> out;
  for (auto row : read_jsonl(path)) {
    // store exports carry bookkeeping keys
    row.erase("id");
    row.erase("version");
    out.push_back(record_from_json(row));
  }
  return out;
}

void emit(const json& j) { std::cout << j.dump(2) << "\n"; }

void emit_jsonl(const std::vector<json>& rows) { std::cout << to_jsonl(rows); }

std::int64_t resolve_timestamp(const std::optional<std::int64_t>& flag, const std::string& backend) {
  if (flag) return *flag;
  if (const char* env = std::getenv("SOURCE_DATE_EPOCH"); env && *env) {
    try {
      return std::stoll(env);
    } catch (const std::exception&) {
      throw CLI::ValidationError("SOURCE_DATE_EPOCH", "not an integer");
    }
  }
  // replayed runs stay byte-identical unless a stamp is asked for
  return backend.rfind("cassette:", 0) == 0 ? 0 : now_unix_seconds();
}

struct ExtractArgs {
  std::string mode = "dive";
  std::vector<std::string> bundles;
  std::string backend;
  std::string out;
  std::optional<std::int64_t> timestamp;
  std::optional<std::string> config;
  std::optional<std::string> prompts;
  int jobs = 1;
  bool sequential_describe = false;
};

int do_extract(const ExtractArgs& a) {
  const auto mode = *parse_extraction_mode(a.mode);
  const auto backends = make_backend_set(a.backend, load_http_config(a.config ? std::optional<fs::path>(*a.config)
                                                                               : std::nullopt));
  PipelineOptions opts;
  if (a.prompts) opts.prompts = PromptLibrary(fs::path(*a.prompts));
  opts.timestamp = resolve_timestamp(a.timestamp, a.backend);
  opts.concurrent_describe = !a.sequential_describe;

  struct Outcome {
    std::vector<json> records;
    json manifest;
  };
  auto one = [&](const std::string& dir) {
    const auto bundle = load_bundle(dir);
    Pipeline pipeline(backends, opts);
    const auto result = pipeline.run(bundle, mode);
    Outcome o;
    for (const auto& r : result.records) o.records.push_back(to_json(r));
    o.manifest = run_manifest(bundle, result, pipeline);
    spdlog::info("{}: {} records, {} validation failures, {} tokens", bundle.doi, result.records.size(),
                 result.failures.size(), result.token_usage);
    return o;
  };

  std::vector<Outcome> outcomes(a.bundles.size());
  const std::size_t jobs = static_cast<std::size_t>(std::max(1, a.jobs));
  for (std::size_t start = 0; start < a.bundles.size(); start += jobs) {
    std::vector<std::future<Outcome>> batch;
    const auto stop = std::min(a.bundles.size(), start + jobs);
    for (std::size_t i = start; i < stop; ++i) batch.push_back(std::async(std::launch::async, one, a.bundles[i]));
    std::exception_ptr first;
    for (std::size_t i = start; i < stop; ++i) {
      try {
        outcomes[i] = batch[i - start].get();
      } catch (...) {
        if (!first) first = std::current_exception();
      }
    }
    if (first) std::rethrow_exception(first);
  }

  std::vector<json> rows;
  json manifests = json::array();
  for (auto& o : outcomes) {
    rows.insert(rows.end(), o.records.begin(), o.records.end());
    manifests.push_back(std::move(o.manifest));
  }
  if (a.out.empty()) {
    emit_jsonl(rows);
  } else {
    write_file_atomic(a.out, to_jsonl(rows));
    write_file_atomic(a.out + ".manifest.json", manifests.dump(2) + "\n");
    std::cerr << fmt::format("wrote {} records to {}\n", rows.size(), a.out);
  }
  return 0;
}

struct QueryArgs {
  std::optional<std::string> material_class, doi, status, formula;
  std::vector<std::string> elements;
  std::optional<double> cap_min, cap_max, t_min, t_max;
};

QueryFilter to_filter(const QueryArgs& q) {
  std::multimap<std::string, std::string> params;
  auto put = [&](const char* k, const auto& v) {
    if (v) {
      if constexpr (std::is_same_v<std::decay_t<decltype(*v)>, double>) {
        params.emplace(k, format_shortest(*v));
      } else {
        params.emplace(k, *v);
      }
    }
  };
  put("material_class", q.material_class);
  put("doi", q.doi);
  put("status", q.status);
  put("formula", q.formula);
  put("cap_min", q.cap_min);
  put("cap_max", q.cap_max);
  put("t_min", q.t_min);
  put("t_max", q.t_max);
  for (const auto& e : q.elements) params.emplace("element", e);
  return filter_from_params(params);
}

std::vector<double> parse_edges(const std::string& text) {
  std::vector<double> edges;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto c = text.find(',', pos);
    auto part = std::string(trim(std::string_view(text).substr(pos, c == std::string::npos ? std::string::npos : c - pos)));
    try {
      std::size_t used = 0;
      edges.push_back(std::stod(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw CLI::ValidationError("--edges", "not a number: '" + part + "'");
    }
    if (c == std::string::npos) break;
    pos = c + 1;
  }
  return edges;
}

int serve_until_signal(const ApiConfig& cfg) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  // block before the server spawns threads so only the waiter sees them
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  ApiServer server(cfg);
  const int port = server.start();
  std::cout << json{{"address", cfg.bind_address}, {"port", port}}.dump() << std::endl;
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    spdlog::info("signal {}, shutting down", sig);
    server.stop();
  });
  server.wait();
  // server stopped on its own: wake the waiter
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return 0;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"dive: hydrogen storage materials extraction, curation, prediction and design"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "dive 1.0.0");
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Validate converted paper bundles and print a summary per bundle");
  std::vector<std::string> ingest_dirs;
  ingest->add_option("dirs", ingest_dirs, "Bundle directories")->required()->check(CLI::ExistingDirectory);

  // extract
  auto* extract = app.add_subcommand("extract", "Extract records from bundles");
  ExtractArgs ex;
  extract->add_option("--mode", ex.mode, "direct or dive")->check(CLI::IsMember({"direct", "dive"}))
      ->capture_default_str();
  extract->add_option("--bundle", ex.bundles, "Bundle directory (repeatable)")->required()
      ->check(CLI::ExistingDirectory);
  extract->add_option("--backend", ex.backend, "cassette:<file>, record:<file> or http")->required();
  extract->add_option("--out", ex.out, "Records JSONL (manifest goes to <out>.manifest.json); stdout when omitted");
  extract->add_option("--timestamp", ex.timestamp, "Provenance time, unix seconds (default SOURCE_DATE_EPOCH)");
  extract->add_option("--config", ex.config, "Gateway config JSON")->check(CLI::ExistingFile);
  extract->add_option("--prompts", ex.prompts, "Directory overriding prompt templates")->check(CLI::ExistingDirectory);
  extract->add_option("--jobs", ex.jobs, "Bundles processed in parallel")->check(CLI::PositiveNumber)
      ->capture_default_str();
  extract->add_flag("--sequential-describe", ex.sequential_describe, "Describe figures one at a time");

  // score
  auto* score = app.add_subcommand("score", "Score predicted records against gold records");
  std::string gold_path, pred_path;
  bool corpus = false;
  ScoreParams params;
  score->add_option("--gold", gold_path, "Gold JSONL")->required()->check(CLI::ExistingFile);
  score->add_option("--pred", pred_path, "Predicted JSONL")->required()->check(CLI::ExistingFile);
  score->add_flag("--corpus", corpus, "Group by DOI and report per-paper scores");
  score->add_option("--theta", params.theta, "Minimum match similarity")->check(CLI::Range(-1.0, 1.0))
      ->capture_default_str();
  score->add_option("--epsilon", params.epsilon, "Relative error floor")->check(CLI::PositiveNumber)
      ->capture_default_str();

  // db
  auto* db = app.add_subcommand("db", "Record store operations");
  db->require_subcommand(1);
  std::string store_dir;
  db->add_option("--store", store_dir, "Store directory")->required();

  auto* db_append = db->add_subcommand("append", "Append records from JSONL");
  std::string append_in;
  std::vector<std::string> append_manifests;
  db_append->add_option("input", append_in, "Records JSONL")->required()->check(CLI::ExistingFile);
  db_append->add_option("--manifest", append_manifests, "Run manifest(s) to import")->check(CLI::ExistingFile);
  auto* db_import = db->add_subcommand("import", "Import a pipeline run (records and its manifest)");
  std::string import_in;
  db_import->add_option("input", import_in, "Records JSONL written by extract")->required()
      ->check(CLI::ExistingFile);

  auto* db_query = db->add_subcommand("query", "Filter records; prints JSONL");
  QueryArgs qa;
  db_query->add_option("--class", qa.material_class, "Material class");
  db_query->add_option("--element", qa.elements, "Required element (repeatable)");
  db_query->add_option("--cap-min", qa.cap_min, "Capacity lower bound, wt.%");
  db_query->add_option("--cap-max", qa.cap_max, "Capacity upper bound, wt.%");
  db_query->add_option("--t-min", qa.t_min, "Temperature lower bound, K");
  db_query->add_option("--t-max", qa.t_max, "Temperature upper bound, K");
  db_query->add_option("--doi", qa.doi, "Source DOI");
  db_query->add_option("--status", qa.status, "Review status");
  db_query->add_option("--formula", qa.formula, "Formula (canonical match)");

  auto* db_stats = db->add_subcommand("stats", "Aggregations as JSON");
  db_stats->require_subcommand(1);
  auto* st_hist = db_stats->add_subcommand("histogram", "Capacity histogram per class");
  std::string edges_text = "0,2,4,6,8,10,12,14,16,18,20";
  st_hist->add_option("--edges", edges_text, "Comma-separated bin edges, wt.%")->capture_default_str();
  auto* st_elem = db_stats->add_subcommand("elements", "Element frequency within a capacity range");
  double lo = 0.0, hi = std::numeric_limits<double>::infinity();
  st_elem->add_option("--lo", lo, "Lower capacity bound (inclusive)")->required();
  st_elem->add_option("--hi", hi, "Upper capacity bound (exclusive)")->required();
  auto* st_dop = db_stats->add_subcommand("dopants", "Dopants of a base system");
  std::string dop_base;
  std::size_t dop_k = 5;
  st_dop->add_option("--base", dop_base, "Base formula, e.g. MgH2")->required();
  st_dop->add_option("--k", dop_k, "Number of dopants")->check(CLI::PositiveNumber)->capture_default_str();

  auto* db_export = db->add_subcommand("export", "Merged JSONL of current records");
  std::string export_out;
  db_export->add_option("--out", export_out, "Output file; stdout when omitted");

  auto* db_review = db->add_subcommand("review", "Accept, correct or reject a record");
  RecordId review_id = 0;
  std::string review_action, reviewer;
  std::optional<std::string> review_record;
  db_review->add_option("--id", review_id, "Record id")->required();
  db_review->add_option("--action", review_action, "accept, correct or reject")->required()
      ->check(CLI::IsMember({"accept", "correct", "reject"}));
  db_review->add_option("--reviewer", reviewer, "Reviewer name")->required();
  db_review->add_option("--record", review_record, "Corrected record JSON file")->check(CLI::ExistingFile);

  auto* db_queue = db->add_subcommand("queue", "Pending records, oldest first");

  // train
  auto* trn = app.add_subcommand("train", "Train the capacity predictor");
  std::string train_data, train_out, target = "capacity_wt_pct";
  TrainConfig tcfg;
  trn->add_option("--data", train_data, "JSONL rows with formula and target")->required()
      ->check(CLI::ExistingFile);
  trn->add_option("--target", target, "Target field")->capture_default_str();
  trn->add_option("--seed", tcfg.seed, "Split and CV seed")->capture_default_str();
  trn->add_option("--out", train_out, "Model file")->required();

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic training set");
  std::size_t synth_n = 500;
  std::uint64_t synth_seed = 7;
  double synth_noise = 0.1;
  std::string synth_out;
  synth->add_option("--n", synth_n, "Rows")->check(CLI::PositiveNumber)->capture_default_str();
  synth->add_option("--seed", synth_seed, "Seed")->capture_default_str();
  synth->add_option("--noise", synth_noise, "Target noise sigma")->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  synth->add_option("--out", synth_out, "Output JSONL")->required();

  // predict
  auto* pred = app.add_subcommand("predict", "Predict capacity for a formula");
  std::string model_path;
  std::vector<std::string> formulas;
  pred->add_option("--model", model_path, "Model file")->required()->check(CLI::ExistingFile);
  pred->add_option("--formula", formulas, "Formula (repeatable)")->required();

  // design
  auto* des = app.add_subcommand("design", "Run the design loop");
  std::optional<std::string> spec_path, design_store, design_backend, design_out, design_report;
  std::string engine_name = "fallback", design_model;
  bool preset_doe = false;
  auto* spec_opt = des->add_option("--spec", spec_path, "Design spec JSON")->check(CLI::ExistingFile);
  des->add_flag("--preset-doe", preset_doe, "Use the built-in 5.5 wt.% spec")->excludes(spec_opt);
  des->add_option("--engine", engine_name, "llm or fallback")->check(CLI::IsMember({"llm", "fallback"}))
      ->capture_default_str();
  des->add_option("--model", design_model, "Predictor model file")->required()->check(CLI::ExistingFile);
  des->add_option("--store", design_store, "Store for retrieval and novelty");
  des->add_option("--backend", design_backend, "Backend spec for the llm engine");
  des->add_option("--out", design_out, "Trace JSON; stdout when omitted");
  des->add_option("--report", design_report, "Markdown report");

  // serve
  auto* srv = app.add_subcommand("serve", "Serve the JSON API");
  ApiConfig api;
  std::optional<std::string> srv_model, srv_static, srv_token, srv_backend;
  std::string srv_store;
  srv->add_option("--port", api.port, "Port (0 picks a free one)")->check(CLI::Range(0, 65535))
      ->capture_default_str();
  srv->add_option("--bind", api.bind_address, "Bind address")->capture_default_str();
  srv->add_option("--store", srv_store, "Store directory")->required();
  srv->add_option("--model", srv_model, "Predictor model file")->check(CLI::ExistingFile);
  srv->add_option("--static", srv_static, "Directory of UI assets served at /")->check(CLI::ExistingDirectory);
  srv->add_option("--token", srv_token, "Require this bearer token (default DIVE_API_TOKEN)");
  srv->add_option("--design-backend", srv_backend, "Backend spec for llm design requests");
  srv->add_option("--threads", api.threads, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  // stdout carries machine output
  if (!spdlog::get("dive")) spdlog::set_default_logger(spdlog::stderr_color_mt("dive"));
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::warn);

  try {
    if (*ingest) {
      for (const auto& d : ingest_dirs) {
        const auto b = load_bundle(d);
        json figs = json::array();
        for (const auto& f : b.figures) figs.push_back({{"id", f.id}, {"image", f.image_ref}, {"caption", f.caption}});
        std::cout << json{{"path", d}, {"doi", b.doi}, {"title", b.title}, {"year", b.year ? json(*b.year) : json()},
                          {"body_bytes", b.body.size()}, {"figures", figs}}
                         .dump()
                  << "\n";
      }
      return 0;
    }
    if (*extract) return do_extract(ex);
    if (*score) {
      const auto gold = read_records(gold_path);
      const auto predicted = read_records(pred_path);
      FallbackEmbedder embedder;
      if (corpus) {
        emit(to_json(score_corpus(pair_by_doi(gold, predicted), embedder, params)));
      } else {
        emit(to_json(score_extraction(gold, predicted, embedder, params)));
      }
      return 0;
    }
    if (*db) {
      RecordStore store(store_dir);
      if (*db_append || *db_import) {
        const auto& in = *db_append ? append_in : import_in;
        const auto res = store.append(read_records(in));
        std::vector<std::string> manifests = append_manifests;
        if (*db_import && fs::exists(in + ".manifest.json")) manifests.push_back(in + ".manifest.json");
        for (const auto& m : manifests) {
          auto j = json::parse(read_text_file(m));
          if (j.is_array()) {
            for (const auto& one : j) store.add_manifest(one);
          } else {
            store.add_manifest(j);
          }
        }
        emit({{"appended", res.ids}, {"skipped_duplicates", res.skipped}, {"manifests", manifests.size()},
              {"size", store.size()}});
        return 0;
      }
      if (*db_query) {
        std::vector<json> rows;
        for (const auto& r : store.query(to_filter(qa))) rows.push_back(to_json(r));
        emit_jsonl(rows);
        return 0;
      }
      if (*st_hist) {
        emit(to_json(store.capacity_histogram(parse_edges(edges_text))));
        return 0;
      }
      if (*st_elem) {
        json out = json::array();
        for (const auto& [el, n] : store.element_frequency(lo, hi)) out.push_back({{"element", el}, {"count", n}});
        emit(out);
        return 0;
      }
      if (*st_dop) {
        json out = json::array();
        for (const auto& d : store.dopant_analysis(dop_base, dop_k)) out.push_back(to_json(d));
        emit(out);
        return 0;
      }
      if (*db_export) {
        const auto text = export_jsonl(store);
        if (export_out.empty()) {
          std::cout << text;
        } else {
          write_file_atomic(export_out, text);
        }
        return 0;
      }
      if (*db_review) {
        ReviewAction action{*parse_review_action(review_action), std::nullopt};
        if (review_record) action.correction = json::parse(read_text_file(*review_record));
        emit(to_json(store.set_review(review_id, action, reviewer)));
        return 0;
      }
      if (*db_queue) {
        std::vector<json> rows;
        for (const auto& r : store.review_queue()) rows.push_back(to_json(r));
        emit_jsonl(rows);
        return 0;
      }
    }
    if (*trn) {
      const auto data = load_dataset(train_data, target);
      const auto result = train(data, tcfg);
      const auto digest = result.model.save(train_out);
      const auto& m = result.model.meta().chosen;
      emit({{"model", train_out},
            {"sha256", digest},
            {"rows", data.targets.size()},
            {"skipped_rows", data.skipped},
            {"chosen", {{"n_trees", m.n_trees}, {"max_depth", m.max_depth}, {"learning_rate", m.learning_rate},
                        {"cv_mse", m.cv_mse}}},
            {"metrics", {{"r2", result.metrics.r2}, {"mae", result.metrics.mae}, {"rmse", result.metrics.rmse},
                         {"n_train", result.metrics.n_train}, {"n_test", result.metrics.n_test}}}});
      return 0;
    }
    if (*synth) {
      const auto d = synthetic_dataset(synth_n, synth_seed, synth_noise);
      std::vector<json> rows;
      for (std::size_t i = 0; i < d.formulas.size(); ++i) {
        rows.push_back({{"formula", d.formulas[i]}, {"capacity_wt_pct", d.targets[i]}});
      }
      write_file_atomic(synth_out, to_jsonl(rows));
      return 0;
    }
    if (*pred) {
      const auto model = PredictorModel::load(model_path);
      std::vector<json> rows;
      for (const auto& f : formulas) {
        const auto c = parse_formula(f);
        rows.push_back({{"formula", f}, {"canonical", canonical_formula(c)}, {"predicted_capacity", model.predict(c)}});
      }
      emit_jsonl(rows);
      return 0;
    }
    if (*des) {
      if (!spec_path && !preset_doe) throw CLI::RequiredError("--spec or --preset-doe");
      const auto spec = preset_doe ? doe_preset() : design_spec_from_json(json::parse(read_text_file(*spec_path)));
      const auto model = PredictorModel::load(design_model);
      CapacityFn fn = [&model](const Composition& c) { return model.predict(c); };
      std::unique_ptr<RecordStore> store;
      if (design_store) store = std::make_unique<RecordStore>(*design_store);
      std::unique_ptr<DesignEngine> engine;
      if (engine_name == "llm") {
        if (!design_backend) throw CLI::RequiredError("--backend (for --engine llm)");
        engine = std::make_unique<LlmEngine>(make_backend_set(*design_backend, load_http_config()).text);
      } else {
        engine = std::make_unique<FallbackEngine>();
      }
      const auto trace = run_design(spec, *engine, fn, store.get());
      if (design_out) {
        write_file_atomic(*design_out, to_json(trace).dump(2) + "\n");
      } else {
        emit(to_json(trace));
      }
      if (design_report) write_file_atomic(*design_report, markdown_report(trace));
      return trace.success ? 0 : 1;
    }
    if (*srv) {
      api.store_path = srv_store;
      if (srv_model) api.model_path = *srv_model;
      if (srv_static) api.static_dir = *srv_static;
      if (srv_backend) api.design_backend = *srv_backend;
      if (srv_token) {
        api.auth_token = *srv_token;
      } else if (const char* env = std::getenv("DIVE_API_TOKEN"); env && *env) {
        api.auth_token = env;
      }
      return serve_until_signal(api);
    }
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what();
    if (!e.details().empty()) std::cerr << " " << e.details().dump();
    std::cerr << "\n";
    return e.code() == ErrorCode::InvalidArgument ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace dive::cli
