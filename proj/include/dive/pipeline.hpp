#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dive/corpus.hpp"
#include "dive/gateway.hpp"
#include "dive/prompts.hpp"
#include "dive/record.hpp"

namespace dive {

enum class FigureKind { PCT, TPD, Discharge, Other };
std::string_view to_string(FigureKind k);
std::optional<FigureKind> parse_figure_kind(std::string_view s);

struct FigureClass {
  FigureKind kind = FigureKind::Other;
  double confidence = 0.0;  // [0, 1]

  bool is_key() const { return kind != FigureKind::Other; }
  friend bool operator==(const FigureClass&, const FigureClass&) = default;
};

struct DescriptiveBlock {
  std::string figure_id;
  FigureClass cls;
  std::string text;

  friend bool operator==(const DescriptiveBlock&, const DescriptiveBlock&) = default;
};

/// A chunk whose extraction response could not be parsed, even after the
/// repair retry.
struct ChunkFailure {
  std::size_t chunk_index = 0;
  std::string error;
  std::string last_response;
};

struct ExtractionResult {
  std::vector<MaterialRecord> records;
  std::vector<ValidationFailure> failures;
  ExtractionMode mode = ExtractionMode::Dive;
  std::vector<DescriptiveBlock> descriptive_blocks;  // dive only
  std::vector<FigureClass> figure_classes;           // dive only, bundle figure order
  std::vector<ChunkFailure> chunk_failures;
  std::int64_t token_usage = 0;
  std::size_t records_before_dedup = 0;
  std::vector<std::pair<std::string, double>> stage_ms;  // stage name -> wall time
};

struct PipelineOptions {
  PromptLibrary prompts;
  std::int64_t timestamp = 0;  // provenance stamp, unix seconds
  std::size_t chunk_chars = 24000;
  std::size_t chunk_overlap = 2000;
  std::size_t context_radius = kDefaultContextRadius;
  bool concurrent_describe = true;
};

/// A text slice of the article, in code points of the original.
struct TextChunk {
  std::size_t begin = 0;  // byte offsets
  std::size_t end = 0;
  std::string text;
};

/// Splits `text` into chunks of at most `budget` code points overlapping by
/// `overlap`, cutting before a "\n#" heading when one lies in the back half
/// of the window. Text within budget yields one chunk.
std::vector<TextChunk> chunk_text(std::string_view text, std::size_t budget, std::size_t overlap);

/// Recovers a JSON array of records from model output: strips code fences,
/// accepts {"records": [...]} and a lone object, otherwise parses the first
/// balanced [...] that is valid JSON. Throws MalformedResponse.
nlohmann::json recover_json_array(std::string_view response);

/// Replaces each key figure's anchor with a fenced data block and every other
/// anchor with a caption stub.
std::string splice(const PaperBundle& bundle, const std::vector<DescriptiveBlock>& blocks);

class Pipeline {
 public:
  Pipeline(BackendSet backends, PipelineOptions options);

  FigureClass triage_caption(std::string_view caption);
  DescriptiveBlock describe_figure(const PaperBundle& bundle, std::string_view figure_id, const FigureClass& cls);
  ExtractionResult extract_records(std::string_view text, const PaperBundle& bundle, ExtractionMode mode);
  ExtractionResult run(const PaperBundle& bundle, ExtractionMode mode);

  std::int64_t tokens_used() const { return tokens_.load(); }
  const BackendSet& backends() const { return backends_; }
  const PipelineOptions& options() const { return options_; }

 private:
  ModelResponse call(const ModelEndpoint& ep, ModelRequest req);
  std::string extraction_model_tag(ExtractionMode mode) const;

  BackendSet backends_;
  PipelineOptions options_;
  std::atomic<std::int64_t> tokens_{0};
};

/// Run manifest: mode, model tags, token total, per-stage timings, figure
/// classes and descriptive blocks, record/failure counts.
nlohmann::json run_manifest(const PaperBundle& bundle, const ExtractionResult& result, const Pipeline& pipeline);

nlohmann::json to_json(const DescriptiveBlock& b);
DescriptiveBlock descriptive_block_from_json(const nlohmann::json& j);

}  // namespace dive
