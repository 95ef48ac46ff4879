#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dive/composition.hpp"
#include "dive/gateway.hpp"
#include "dive/prompts.hpp"
#include "dive/record.hpp"
#include "dive/store.hpp"

namespace dive {

/// Capacity estimate in wt.% for a composition; usually a PredictorModel.
using CapacityFn = std::function<double(const Composition&)>;

struct DesignSpec {
  std::string name;
  std::vector<std::string> element_pool;  // ordered; the grid follows this order
  std::vector<std::string> a_site;        // optional roles, subsets of the pool
  std::vector<std::string> b_site;
  MaterialClass material_class = MaterialClass::Other;
  double min_capacity = 1.0;  // wt.%
  std::optional<std::pair<double, double>> temperature_window;  // K
  std::optional<std::pair<double, double>> pressure_window;     // bar
  bool require_novel = true;
  int max_iterations = 5;
  int candidates_per_round = 3;

  void validate() const;  // InvalidArgument
};

/// Named spec: >= 5.5 wt.% within 233.15-358.15 K.
DesignSpec doe_preset();

nlohmann::json to_json(const DesignSpec& s);
/// Accepts {"preset": "doe"} as a base whose fields the object overrides.
DesignSpec design_spec_from_json(const nlohmann::json& j);

struct Candidate {
  std::string formula;
  std::string rationale;
  std::string source;  // engine name, or "fallback" when substituted
};

struct Verdict {
  std::string formula;
  bool parsed = false;
  bool in_pool = false;
  std::optional<double> predicted_capacity;
  std::optional<bool> novel;
  bool meets_targets = false;
  std::string feedback;
  std::string canonical;  // empty when unparsed
};

struct DesignIteration {
  std::vector<Candidate> candidates;
  std::vector<Verdict> verdicts;
};

struct DesignTrace {
  DesignSpec spec;
  std::string engine;
  std::vector<DesignIteration> iterations;
  bool success = false;
  std::optional<Verdict> winner;
};

class DesignEngine {
 public:
  virtual ~DesignEngine() = default;
  /// May throw EmptyProposal; the loop then substitutes fallback candidates.
  virtual std::vector<Candidate> propose(const DesignSpec& spec, const std::vector<DesignIteration>& history,
                                         const std::vector<StoredRecord>& context) = 0;
  virtual std::string name() const = 0;
};

/// Enumerates the stoichiometry grid of the pool: binary pairs with ratios
/// from {1,2,3}, then 10/20/30% substitution of the B site and the A site by
/// other pool elements. Skips anything already in the history.
class FallbackEngine final : public DesignEngine {
 public:
  std::vector<Candidate> propose(const DesignSpec& spec, const std::vector<DesignIteration>& history,
                                 const std::vector<StoredRecord>& context) override;
  std::string name() const override { return "fallback"; }

  /// The full ordered grid for a spec.
  static std::vector<std::string> grid(const DesignSpec& spec);
};

/// Prompts a text model with the spec, retrieved records and the feedback
/// so far; reads "formula | rationale" lines.
class LlmEngine final : public DesignEngine {
 public:
  LlmEngine(ModelEndpoint endpoint, PromptLibrary prompts = PromptLibrary{});
  std::vector<Candidate> propose(const DesignSpec& spec, const std::vector<DesignIteration>& history,
                                 const std::vector<StoredRecord>& context) override;
  std::string name() const override { return "llm:" + endpoint_.model_tag; }

 private:
  ModelEndpoint endpoint_;
  PromptLibrary prompts_;
};

/// Replays fixed rounds of candidates.
class ScriptedEngine final : public DesignEngine {
 public:
  explicit ScriptedEngine(std::vector<std::vector<Candidate>> rounds) : rounds_(std::move(rounds)) {}
  std::vector<Candidate> propose(const DesignSpec& spec, const std::vector<DesignIteration>& history,
                                 const std::vector<StoredRecord>& context) override;
  std::string name() const override { return "scripted"; }

 private:
  std::vector<std::vector<Candidate>> rounds_;
};

/// Parses "formula | rationale" lines, skipping blanks, bullets and prose.
std::vector<Candidate> parse_candidate_lines(std::string_view text, const std::string& source);

/// Top `limit` records by elements shared with the pool, then capacity.
std::vector<StoredRecord> design_context(const DesignSpec& spec, const RecordStore* store, std::size_t limit = 20);

/// Parse, pool check, predict, novelty (when required). Never throws.
Verdict verify(const std::string& candidate, const DesignSpec& spec, const CapacityFn& model,
               const RecordStore* store);

DesignTrace run_design(const DesignSpec& spec, DesignEngine& engine, const CapacityFn& model,
                       const RecordStore* store);

nlohmann::json to_json(const Verdict& v);
nlohmann::json to_json(const DesignTrace& t);
std::string markdown_report(const DesignTrace& t);

}  // namespace dive
