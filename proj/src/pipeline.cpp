#include "dive/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <future>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "dive/error.hpp"
#include "dive/util.hpp"

namespace dive {

using nlohmann::json;

std::string_view to_string(FigureKind k) {
  switch (k) {
    case FigureKind::PCT: return "PCT";
    case FigureKind::TPD: return "TPD";
    case FigureKind::Discharge: return "discharge";
    case FigureKind::Other: return "other";
  }
  return "other";
}

std::optional<FigureKind> parse_figure_kind(std::string_view s) {
  auto t = to_lower_ascii(trim(s));
  if (t == "pct") return FigureKind::PCT;
  if (t == "tpd" || t == "tds") return FigureKind::TPD;
  if (t == "discharge") return FigureKind::Discharge;
  if (t == "other") return FigureKind::Other;
  return std::nullopt;
}

json to_json(const DescriptiveBlock& b) {
  return json{{"figure_id", b.figure_id},
              {"class", to_string(b.cls.kind)},
              {"confidence", b.cls.confidence},
              {"text", b.text}};
}

DescriptiveBlock descriptive_block_from_json(const json& j) {
  DescriptiveBlock b;
  b.figure_id = j.at("figure_id").get<std::string>();
  b.cls.kind = parse_figure_kind(j.at("class").get<std::string>()).value_or(FigureKind::Other);
  b.cls.confidence = j.value("confidence", 0.0);
  b.text = j.at("text").get<std::string>();
  return b;
}

// ---------------------------------------------------------------------------

std::vector<TextChunk> chunk_text(std::string_view text, std::size_t budget, std::size_t overlap) {
  if (budget == 0 || 2 * overlap >= budget) {
    throw Error(ErrorCode::InvalidArgument, "chunk overlap must be less than half the budget");
  }
  std::vector<std::size_t> starts;  // byte offset of each code point, plus end
  for (std::size_t i = 0; i < text.size(); ++i) {
    if ((static_cast<unsigned char>(text[i]) & 0xC0) != 0x80) starts.push_back(i);
  }
  const std::size_t n = starts.size();
  starts.push_back(text.size());
  if (n <= budget) return {TextChunk{0, text.size(), std::string(text)}};

  std::vector<TextChunk> chunks;
  std::size_t s = 0;
  while (true) {
    std::size_t e = std::min(s + budget, n);
    if (e < n) {
      const std::size_t floor_byte = starts[s + budget / 2];
      auto p = text.rfind("\n#", starts[e] - 1);
      // '#' must start the next chunk, so the cut is at p + 1
      if (p != std::string_view::npos && p + 1 > floor_byte && p + 1 < starts[e]) {
        e = static_cast<std::size_t>(std::lower_bound(starts.begin(), starts.end(), p + 1) - starts.begin());
      }
    }
    chunks.push_back({starts[s], starts[e], std::string(text.substr(starts[s], starts[e] - starts[s]))});
    if (e >= n) break;
    s = e - overlap;
  }
  return chunks;
}

namespace {

std::string_view strip_fences(std::string_view s) {
  auto open = s.find("```");
  if (open == std::string_view::npos) return s;
  auto body = s.find('\n', open);
  if (body == std::string_view::npos) return s;
  auto close = s.find("```", body);
  if (close == std::string_view::npos) return s.substr(body + 1);
  return s.substr(body + 1, close - body - 1);
}

// End (exclusive) of the bracketed value starting at `open`, honoring strings.
std::optional<std::size_t> balanced_end(std::string_view s, std::size_t open) {
  int depth = 0;
  bool in_str = false;
  for (std::size_t i = open; i < s.size(); ++i) {
    char c = s[i];
    if (in_str) {
      if (c == '\\') ++i;
      else if (c == '"') in_str = false;
      continue;
    }
    if (c == '"') in_str = true;
    else if (c == '[' || c == '{') ++depth;
    else if (c == ']' || c == '}') {
      if (--depth == 0) return i + 1;
    }
  }
  return std::nullopt;
}

std::optional<json> as_array(json j) {
  if (j.is_array()) return j;
  if (j.is_object()) {
    if (auto it = j.find("records"); it != j.end() && it->is_array()) return *it;
    return json::array({std::move(j)});
  }
  return std::nullopt;
}

std::optional<json> recover_json_object(std::string_view response) {
  auto body = trim(strip_fences(response));
  auto j = json::parse(body, nullptr, false);
  if (!j.is_discarded() && j.is_object()) return j;
  for (auto p = body.find('{'); p != std::string_view::npos; p = body.find('{', p + 1)) {
    if (auto end = balanced_end(body, p)) {
      auto k = json::parse(body.substr(p, *end - p), nullptr, false);
      if (!k.is_discarded() && k.is_object()) return k;
    }
  }
  return std::nullopt;
}

}  // namespace

json recover_json_array(std::string_view response) {
  auto body = trim(strip_fences(response));
  if (body.empty()) throw Error(ErrorCode::MalformedResponse, "empty response");
  std::string first_error;
  try {
    if (auto a = as_array(json::parse(body))) return *a;
  } catch (const json::parse_error& e) {
    first_error = e.what();
  }
  for (auto p = body.find('['); p != std::string_view::npos; p = body.find('[', p + 1)) {
    auto end = balanced_end(body, p);
    if (!end) continue;
    auto j = json::parse(body.substr(p, *end - p), nullptr, false);
    if (!j.is_discarded() && j.is_array()) return j;
  }
  throw Error(ErrorCode::MalformedResponse,
              first_error.empty() ? std::string("no JSON array in response") : first_error);
}

std::string splice(const PaperBundle& bundle, const std::vector<DescriptiveBlock>& blocks) {
  std::map<std::string, const DescriptiveBlock*, std::less<>> by_id;
  for (const auto& b : blocks) {
    bundle.figure(b.figure_id);  // UnknownFigureId
    if (!by_id.emplace(b.figure_id, &b).second) {
      throw Error(ErrorCode::InvalidArgument, "duplicate descriptive block for " + b.figure_id,
                  {{"figure_id", b.figure_id}});
    }
  }
  struct Cut {
    std::size_t pos, len;
    std::string replacement;
  };
  std::vector<Cut> cuts;
  for (const auto& f : bundle.figures) {
    auto pos = bundle.body.find(f.anchor);
    if (pos == std::string::npos) {
      throw Error(ErrorCode::AnchorNotFound, "anchor missing for " + f.id, {{"figure_id", f.id}});
    }
    std::string rep;
    if (auto it = by_id.find(f.id); it != by_id.end()) {
      rep = fmt::format("[FIGURE {0} — EXTRACTED DATA]\n{1}\n[/FIGURE {0}]", f.id, it->second->text);
    } else {
      rep = fmt::format("[FIGURE {}: {}]", f.id, f.caption);
    }
    cuts.push_back({pos, f.anchor.size(), std::move(rep)});
  }
  std::sort(cuts.begin(), cuts.end(), [](const Cut& a, const Cut& b) { return a.pos < b.pos; });
  std::string out;
  std::size_t at = 0;
  for (const auto& c : cuts) {
    if (c.pos < at) throw Error(ErrorCode::MalformedManifest, "figure anchors overlap");
    out.append(bundle.body, at, c.pos - at);
    out += c.replacement;
    at = c.pos + c.len;
  }
  out.append(bundle.body, at);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

[[noreturn]] void rethrow_staged(const Error& e, std::string_view stage) {
  json d = e.details().is_object() ? e.details() : json::object();
  d["stage"] = stage;
  throw Error(e.code(), fmt::format("{}: {}", stage, e.what()), std::move(d));
}

}  // namespace

Pipeline::Pipeline(BackendSet backends, PipelineOptions options)
    : backends_(std::move(backends)), options_(std::move(options)) {}

ModelResponse Pipeline::call(const ModelEndpoint& ep, ModelRequest req) {
  req.temperature = 0.0;
  auto r = ep.send(std::move(req));
  tokens_ += r.token_usage;
  if (!r.text) throw Error(ErrorCode::MalformedResponse, "model returned no text");
  return r;
}

std::string Pipeline::extraction_model_tag(ExtractionMode mode) const {
  return mode == ExtractionMode::Direct ? backends_.vision.model_tag : backends_.text.model_tag;
}

FigureClass Pipeline::triage_caption(std::string_view caption) {
  if (trim(caption).empty()) throw Error(ErrorCode::InvalidArgument, "caption must be non-empty");
  auto t = options_.prompts.get("triage");
  ModelRequest req;
  req.kind = RequestKind::Text;
  req.system_prompt = render(t.system, {});
  req.user_prompt = render(t.user, {{"caption", std::string(caption)}});
  req.max_tokens = 64;
  auto r = call(backends_.triage_endpoint(), std::move(req));

  FigureClass out;
  if (auto j = recover_json_object(*r.text)) {
    auto cls = j->find("class");
    auto conf = j->find("confidence");
    if (cls != j->end() && cls->is_string() && conf != j->end() && conf->is_number()) {
      auto kind = parse_figure_kind(cls->get<std::string>());
      double c = conf->get<double>();
      if (kind && c >= 0.0 && c <= 1.0) return FigureClass{*kind, c};
    }
  }
  spdlog::warn("unparseable triage response for caption '{}': {}", caption, *r.text);
  return out;
}

DescriptiveBlock Pipeline::describe_figure(const PaperBundle& bundle, std::string_view figure_id,
                                           const FigureClass& cls) {
  if (!cls.is_key()) {
    throw Error(ErrorCode::InvalidArgument, "describe_figure needs a key figure class", {{"figure_id", figure_id}});
  }
  const auto& fig = bundle.figure(figure_id);
  auto t = options_.prompts.get(fmt::format("describe_{}", to_lower_ascii(to_string(cls.kind))));
  PromptVars vars{{"figure_id", fig.id},
                  {"caption", fig.caption},
                  {"context", context_window(bundle, fig.id, options_.context_radius)}};
  ModelRequest req;
  req.kind = RequestKind::Vision;
  req.images.push_back(read_figure_image(bundle, fig));
  req.system_prompt = render(t.system, vars);
  req.user_prompt = render(t.user, vars);
  auto r = call(backends_.vision, std::move(req));
  return DescriptiveBlock{fig.id, cls, *r.text};
}

ExtractionResult Pipeline::extract_records(std::string_view text, const PaperBundle& bundle, ExtractionMode mode) {
  if (trim(text).empty()) throw Error(ErrorCode::InvalidArgument, "nothing to extract from");
  const bool direct = mode == ExtractionMode::Direct;
  const auto& endpoint = direct ? backends_.vision : backends_.text;
  const auto tmpl = options_.prompts.get(direct ? "extract_direct" : "extract");
  const auto repair = options_.prompts.get("repair");
  const auto tokens_before = tokens_.load();

  Provenance prov;
  prov.doi = bundle.doi;
  prov.extraction_mode = mode;
  prov.model_tag = extraction_model_tag(mode);
  prov.timestamp = options_.timestamp;

  ExtractionResult result;
  result.mode = mode;
  std::vector<MaterialRecord> merged;
  const auto chunks = chunk_text(text, options_.chunk_chars, options_.chunk_overlap);
  for (std::size_t ci = 0; ci < chunks.size(); ++ci) {
    const auto& chunk = chunks[ci];
    ModelRequest req;
    req.kind = RequestKind::Text;
    if (direct) {
      for (const auto& f : bundle.figures) {
        if (chunk.text.find(f.anchor) != std::string::npos) req.images.push_back(read_figure_image(bundle, f));
      }
      if (!req.images.empty()) req.kind = RequestKind::Vision;
    }
    PromptVars vars{{"doi", bundle.doi}, {"text", chunk.text}};
    req.system_prompt = render(tmpl.system, vars);
    req.user_prompt = render(tmpl.user, vars);

    json rows;
    auto first = call(endpoint, req);
    try {
      rows = recover_json_array(*first.text);
    } catch (const Error& e) {
      spdlog::info("chunk {} of {}: unparseable extraction ({}), retrying once", ci, bundle.doi, e.what());
      ModelRequest retry = req;
      retry.system_prompt = req.system_prompt + "\n\n" + render(repair.system, {});
      retry.user_prompt =
          req.user_prompt + "\n\n" + render(repair.user, {{"error", e.what()}, {"previous", *first.text}});
      auto second = call(endpoint, std::move(retry));
      try {
        rows = recover_json_array(*second.text);
      } catch (const Error& e2) {
        result.chunk_failures.push_back({ci, e2.what(), *second.text});
        spdlog::warn("chunk {} of {} failed after repair: {}", ci, bundle.doi, e2.what());
        continue;
      }
    }

    for (auto& raw : rows) {
      if (!raw.is_object()) {
        result.failures.push_back({{{"record", "not a JSON object"}}, raw});
        continue;
      }
      auto rec_prov = prov;
      json cleaned = raw;
      cleaned.erase("provenance");
      if (auto it = cleaned.find("figure_id"); it != cleaned.end()) {
        if (it->is_string() && bundle.find_figure(it->get<std::string>())) rec_prov.figure_id = it->get<std::string>();
        cleaned.erase(it);
      }
      auto v = validate_record(cleaned, rec_prov);
      if (auto* r = std::get_if<MaterialRecord>(&v)) {
        merged.push_back(std::move(*r));
      } else {
        auto f = std::get<ValidationFailure>(std::move(v));
        f.raw = raw;
        result.failures.push_back(std::move(f));
      }
    }
  }
  result.records_before_dedup = merged.size();
  result.records = dedup_records(std::move(merged));
  result.token_usage = tokens_.load() - tokens_before;
  return result;
}

ExtractionResult Pipeline::run(const PaperBundle& bundle, ExtractionMode mode) {
  if (mode == ExtractionMode::Manual) throw Error(ErrorCode::InvalidArgument, "run mode must be direct or dive");
  const auto tokens_before = tokens_.load();

  if (mode == ExtractionMode::Direct) {
    auto t0 = Clock::now();
    ExtractionResult result;
    try {
      result = extract_records(bundle.body, bundle, mode);
    } catch (const Error& e) {
      rethrow_staged(e, "extract");
    }
    result.stage_ms.emplace_back("extract", ms_since(t0));
    result.token_usage = tokens_.load() - tokens_before;
    return result;
  }

  std::vector<std::pair<std::string, double>> timings;
  auto t0 = Clock::now();
  std::vector<FigureClass> classes;
  try {
    for (const auto& f : bundle.figures) classes.push_back(triage_caption(f.caption));
  } catch (const Error& e) {
    rethrow_staged(e, "triage");
  }
  timings.emplace_back("triage", ms_since(t0));

  t0 = Clock::now();
  std::vector<DescriptiveBlock> blocks;
  try {
    std::vector<std::future<DescriptiveBlock>> pending;
    for (std::size_t i = 0; i < bundle.figures.size(); ++i) {
      if (!classes[i].is_key()) continue;
      const auto policy = options_.concurrent_describe ? std::launch::async : std::launch::deferred;
      pending.push_back(std::async(policy, [this, &bundle, &classes, i] {
        return describe_figure(bundle, bundle.figures[i].id, classes[i]);
      }));
    }
    // collect every future before rethrowing so no task outlives `bundle`
    std::optional<Error> first_error;
    for (auto& p : pending) {
      try {
        blocks.push_back(p.get());
      } catch (const Error& e) {
        if (!first_error) first_error = e;
      }
    }
    if (first_error) throw *first_error;
  } catch (const Error& e) {
    rethrow_staged(e, "describe");
  }
  timings.emplace_back("describe", ms_since(t0));

  t0 = Clock::now();
  std::string spliced;
  try {
    spliced = splice(bundle, blocks);
  } catch (const Error& e) {
    rethrow_staged(e, "splice");
  }
  timings.emplace_back("splice", ms_since(t0));

  t0 = Clock::now();
  ExtractionResult result;
  try {
    result = extract_records(spliced, bundle, mode);
  } catch (const Error& e) {
    rethrow_staged(e, "extract");
  }
  timings.emplace_back("extract", ms_since(t0));

  result.descriptive_blocks = std::move(blocks);
  result.figure_classes = std::move(classes);
  result.stage_ms = std::move(timings);
  result.token_usage = tokens_.load() - tokens_before;
  return result;
}

json run_manifest(const PaperBundle& bundle, const ExtractionResult& result, const Pipeline& pipeline) {
  const auto& b = pipeline.backends();
  json classes = json::array();
  for (std::size_t i = 0; i < result.figure_classes.size() && i < bundle.figures.size(); ++i) {
    classes.push_back({{"figure_id", bundle.figures[i].id},
                       {"class", to_string(result.figure_classes[i].kind)},
                       {"confidence", result.figure_classes[i].confidence}});
  }
  json blocks = json::array();
  for (const auto& blk : result.descriptive_blocks) blocks.push_back(to_json(blk));
  json timings = json::object();
  for (const auto& [stage, ms] : result.stage_ms) timings[stage] = ms;
  json chunk_failures = json::array();
  for (const auto& f : result.chunk_failures) {
    chunk_failures.push_back({{"chunk", f.chunk_index}, {"error", f.error}, {"last_response", f.last_response}});
  }
  json failures = json::array();
  for (const auto& f : result.failures) failures.push_back(to_json(f));
  return json{{"doi", bundle.doi},
              {"mode", to_string(result.mode)},
              {"model_tags",
               {{"text", b.text.model_tag}, {"vision", b.vision.model_tag}, {"triage", b.triage_endpoint().model_tag}}},
              {"timestamp", format_utc(pipeline.options().timestamp)},
              {"token_usage", result.token_usage},
              {"stage_ms", timings},
              {"figure_classes", classes},
              {"descriptive_blocks", blocks},
              {"records", result.records.size()},
              {"records_before_dedup", result.records_before_dedup},
              {"validation_failures", failures},
              {"chunk_failures", chunk_failures}};
}

}  // namespace dive
