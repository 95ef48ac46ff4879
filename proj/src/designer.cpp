#include "dive/designer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "dive/elements.hpp"
#include "dive/error.hpp"
#include "dive/util.hpp"

namespace dive {

using nlohmann::json;

void DesignSpec::validate() const {
  auto bad = [](const std::string& m) { throw Error(ErrorCode::InvalidArgument, "design spec: " + m); };
  if (element_pool.empty()) bad("element_pool must be non-empty");
  std::set<std::string> pool;
  for (const auto& e : element_pool) {
    if (!ElementTable::instance().find(e)) throw Error(ErrorCode::UnknownElement, "unknown element " + e, {{"element", e}});
    if (!pool.insert(e).second) bad("duplicate pool element " + e);
  }
  for (const auto* site : {&a_site, &b_site}) {
    for (const auto& e : *site) {
      if (!pool.count(e)) bad("site element " + e + " is not in the pool");
    }
  }
  if (a_site.empty() != b_site.empty()) bad("a_site and b_site must be given together");
  if (!(min_capacity > 0.0 && min_capacity < 100.0)) bad("min_capacity must lie in (0, 100)");
  if (max_iterations < 1) bad("max_iterations must be at least 1");
  if (candidates_per_round < 1) bad("candidates_per_round must be at least 1");
  for (const auto* w : {&temperature_window, &pressure_window}) {
    if (*w && !((*w)->first <= (*w)->second)) bad("window lo exceeds hi");
  }
}

DesignSpec doe_preset() {
  DesignSpec s;
  s.name = "doe";
  s.element_pool = {"Mg", "Ti", "V", "Fe", "Ni", "Al"};
  s.min_capacity = 5.5;
  s.temperature_window = std::pair{233.15, 358.15};
  s.require_novel = true;
  s.max_iterations = 5;
  s.candidates_per_round = 3;
  return s;
}

json to_json(const DesignSpec& s) {
  auto window = [](const std::optional<std::pair<double, double>>& w) {
    return w ? json::array({w->first, w->second}) : json(nullptr);
  };
  return json{{"name", s.name},
              {"element_pool", s.element_pool},
              {"a_site", s.a_site},
              {"b_site", s.b_site},
              {"material_class", to_string(s.material_class)},
              {"min_capacity", s.min_capacity},
              {"temperature_window", window(s.temperature_window)},
              {"pressure_window", window(s.pressure_window)},
              {"require_novel", s.require_novel},
              {"max_iterations", s.max_iterations},
              {"candidates_per_round", s.candidates_per_round}};
}

DesignSpec design_spec_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "design spec must be a JSON object");
  DesignSpec s;
  try {
    if (auto p = j.find("preset"); p != j.end()) {
      if (*p != "doe") throw Error(ErrorCode::InvalidArgument, "unknown preset " + p->dump());
      s = doe_preset();
    }
    if (j.contains("name")) s.name = j["name"].get<std::string>();
    if (j.contains("element_pool")) s.element_pool = j["element_pool"].get<std::vector<std::string>>();
    if (j.contains("a_site")) s.a_site = j["a_site"].get<std::vector<std::string>>();
    if (j.contains("b_site")) s.b_site = j["b_site"].get<std::vector<std::string>>();
    if (j.contains("material_class")) {
      auto c = parse_material_class(j["material_class"].get<std::string>());
      if (!c) throw Error(ErrorCode::InvalidArgument, "unknown material_class " + j["material_class"].dump());
      s.material_class = *c;
    }
    if (j.contains("min_capacity")) s.min_capacity = j["min_capacity"].get<double>();
    for (auto [key, target] : {std::pair{"temperature_window", &s.temperature_window},
                               std::pair{"pressure_window", &s.pressure_window}}) {
      if (!j.contains(key)) continue;
      const auto& w = j[key];
      if (w.is_null()) {
        target->reset();
      } else {
        auto v = w.get<std::vector<double>>();
        if (v.size() != 2) throw Error(ErrorCode::InvalidArgument, std::string(key) + " must be [lo, hi]");
        *target = std::pair{v[0], v[1]};
      }
    }
    if (j.contains("require_novel")) s.require_novel = j["require_novel"].get<bool>();
    if (j.contains("max_iterations")) s.max_iterations = j["max_iterations"].get<int>();
    if (j.contains("candidates_per_round")) s.candidates_per_round = j["candidates_per_round"].get<int>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("bad design spec: ") + e.what());
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------

namespace {

std::string term(const std::string& el, double amount) {
  return amount == 1.0 ? el : el + format_trimmed(amount, 4);
}

std::string key_of(const std::string& formula) {
  try {
    return canonical_formula(parse_formula(formula));
  } catch (const Error&) {
    return formula;
  }
}

std::set<std::string> seen_in(const std::vector<DesignIteration>& history) {
  std::set<std::string> seen;
  for (const auto& it : history) {
    for (const auto& c : it.candidates) seen.insert(key_of(c.formula));
  }
  return seen;
}

}  // namespace

std::vector<std::string> FallbackEngine::grid(const DesignSpec& spec) {
  const auto& pool = spec.element_pool;
  std::vector<std::pair<std::string, std::string>> pairs;
  if (!spec.a_site.empty()) {
    for (const auto& a : spec.a_site) {
      for (const auto& b : spec.b_site) {
        if (a != b) pairs.emplace_back(a, b);
      }
    }
  } else {
    for (std::size_t i = 0; i < pool.size(); ++i) {
      for (std::size_t j = i + 1; j < pool.size(); ++j) pairs.emplace_back(pool[i], pool[j]);
    }
  }
  const auto& a_pool = spec.a_site.empty() ? pool : spec.a_site;
  const auto& b_pool = spec.b_site.empty() ? pool : spec.b_site;

  std::vector<std::string> out;
  std::set<std::string> keys;
  auto add = [&](std::string f) {
    if (keys.insert(key_of(f)).second) out.push_back(std::move(f));
  };
  if (pool.size() == 1) add(pool[0]);

  struct Base {
    std::string a, b;
    double x, y;
  };
  std::vector<Base> bases;
  for (const auto& [a, b] : pairs) {
    for (int x = 1; x <= 3; ++x) {
      for (int y = 1; y <= 3; ++y) {
        auto f = term(a, x) + term(b, y);
        if (keys.count(key_of(f))) continue;
        bases.push_back({a, b, double(x), double(y)});
        add(std::move(f));
      }
    }
  }
  for (const auto& base : bases) {
    for (const auto& s : b_pool) {
      if (s == base.a || s == base.b) continue;
      for (int k = 1; k <= 3; ++k) {
        const double f = k / 10.0;
        add(term(base.a, base.x) + term(base.b, base.y * (1.0 - f)) + term(s, base.y * f));
      }
    }
    for (const auto& s : a_pool) {
      if (s == base.a || s == base.b) continue;
      for (int k = 1; k <= 3; ++k) {
        const double f = k / 10.0;
        add(term(base.a, base.x * (1.0 - f)) + term(s, base.x * f) + term(base.b, base.y));
      }
    }
  }
  return out;
}

std::vector<Candidate> FallbackEngine::propose(const DesignSpec& spec, const std::vector<DesignIteration>& history,
                                               const std::vector<StoredRecord>&) {
  const auto seen = seen_in(history);
  std::vector<Candidate> out;
  for (auto& f : grid(spec)) {
    if (static_cast<int>(out.size()) >= spec.candidates_per_round) break;
    if (seen.count(key_of(f))) continue;
    out.push_back({f, "stoichiometry grid over the element pool", "fallback"});
  }
  if (out.empty()) throw Error(ErrorCode::EmptyProposal, "the element-pool grid is exhausted");
  return out;
}

std::vector<Candidate> ScriptedEngine::propose(const DesignSpec&, const std::vector<DesignIteration>& history,
                                               const std::vector<StoredRecord>&) {
  if (history.size() >= rounds_.size() || rounds_[history.size()].empty()) {
    throw Error(ErrorCode::EmptyProposal, "script has no candidates for this round");
  }
  auto out = rounds_[history.size()];
  for (auto& c : out) {
    if (c.source.empty()) c.source = name();
  }
  return out;
}

std::vector<Candidate> parse_candidate_lines(std::string_view text, const std::string& source) {
  std::vector<Candidate> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    auto line = trim(text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos));
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    if (line.empty()) continue;
    // list markers: "-", "*", "1.", "2)"
    if (line.starts_with("- ") || line.starts_with("* ")) line = trim(line.substr(2));
    std::size_t digits = 0;
    while (digits < line.size() && std::isdigit(static_cast<unsigned char>(line[digits]))) ++digits;
    if (digits > 0 && digits < line.size() && (line[digits] == '.' || line[digits] == ')') &&
        digits + 1 < line.size() && line[digits + 1] == ' ') {
      line = trim(line.substr(digits + 2));
    }
    auto bar = line.find('|');
    auto formula = trim(line.substr(0, bar));
    std::string rationale = bar == std::string_view::npos ? "" : std::string(trim(line.substr(bar + 1)));
    try {
      parse_formula(formula);
      out.push_back({std::string(formula), rationale, source});
    } catch (const Error& e) {
      spdlog::debug("discarding proposal line '{}': {}", line, e.what());
    }
  }
  return out;
}

LlmEngine::LlmEngine(ModelEndpoint endpoint, PromptLibrary prompts)
    : endpoint_(std::move(endpoint)), prompts_(std::move(prompts)) {}

namespace {

std::string spec_text(const DesignSpec& s) {
  std::string out = "Allowed elements: ";
  for (std::size_t i = 0; i < s.element_pool.size(); ++i) out += (i ? ", " : "") + s.element_pool[i];
  out += '\n';
  if (!s.a_site.empty()) {
    out += "A site: ";
    for (std::size_t i = 0; i < s.a_site.size(); ++i) out += (i ? ", " : "") + s.a_site[i];
    out += "\nB site: ";
    for (std::size_t i = 0; i < s.b_site.size(); ++i) out += (i ? ", " : "") + s.b_site[i];
    out += '\n';
  }
  if (s.material_class != MaterialClass::Other) out += fmt::format("Material class: {}\n", to_string(s.material_class));
  out += fmt::format("Minimum gravimetric capacity: {} wt.%\n", format_trimmed(s.min_capacity, 4));
  if (s.temperature_window) {
    out += fmt::format("Operating temperature: {} to {} K\n", format_trimmed(s.temperature_window->first, 2),
                       format_trimmed(s.temperature_window->second, 2));
  }
  if (s.pressure_window) {
    out += fmt::format("Operating pressure: {} to {} bar\n", format_trimmed(s.pressure_window->first, 3),
                       format_trimmed(s.pressure_window->second, 3));
  }
  if (s.require_novel) out += "The material must not already be reported.\n";
  return out;
}

std::string context_text(const std::vector<StoredRecord>& records) {
  if (records.empty()) return "(none)";
  std::string out;
  for (const auto& r : records) {
    const auto& rec = r.record;
    out += rec.formula_raw;
    if (rec.material_class != MaterialClass::Other) out += fmt::format(" | {}", to_string(rec.material_class));
    if (rec.capacity_wt_pct) out += fmt::format(" | {} wt.%", format_shortest(rec.capacity_wt_pct->canonical_value));
    if (rec.desorption_temperature) {
      out += fmt::format(" | desorbs at {} K", format_shortest(rec.desorption_temperature->canonical_value));
    }
    out += '\n';
  }
  return out;
}

std::string history_text(const std::vector<DesignIteration>& history) {
  if (history.empty()) return "(first round)";
  std::string out;
  for (std::size_t i = 0; i < history.size(); ++i) {
    out += fmt::format("Round {}:\n", i + 1);
    for (const auto& v : history[i].verdicts) out += fmt::format("- {}: {}\n", v.formula, v.feedback);
  }
  return out;
}

}  // namespace

std::vector<Candidate> LlmEngine::propose(const DesignSpec& spec, const std::vector<DesignIteration>& history,
                                          const std::vector<StoredRecord>& context) {
  auto t = prompts_.get("design");
  PromptVars vars{{"spec", spec_text(spec)},
                  {"context", context_text(context)},
                  {"history", history_text(history)},
                  {"count", std::to_string(spec.candidates_per_round)}};
  ModelRequest req;
  req.kind = RequestKind::Text;
  req.temperature = 0.0;
  req.system_prompt = render(t.system, vars);
  req.user_prompt = render(t.user, vars);
  auto r = endpoint_.send(std::move(req));
  if (!r.text) throw Error(ErrorCode::MalformedResponse, "design engine returned no text");
  auto out = parse_candidate_lines(*r.text, name());
  if (out.empty()) throw Error(ErrorCode::EmptyProposal, "no parseable formula in the engine's answer");
  return out;
}

// ---------------------------------------------------------------------------

std::vector<StoredRecord> design_context(const DesignSpec& spec, const RecordStore* store, std::size_t limit) {
  if (!store) return {};
  std::set<std::string> pool(spec.element_pool.begin(), spec.element_pool.end());
  struct Ranked {
    std::size_t shared;
    double capacity;
    StoredRecord rec;
  };
  std::vector<Ranked> ranked;
  for (auto& r : store->all()) {
    if (!r.record.composition) continue;
    std::size_t shared = 0;
    for (const auto& e : r.record.composition->elements()) shared += pool.count(e);
    if (shared == 0) continue;
    const double cap = r.record.capacity_wt_pct ? r.record.capacity_wt_pct->canonical_value : -1.0;
    ranked.push_back({shared, cap, std::move(r)});
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.shared != b.shared) return a.shared > b.shared;
    return a.capacity > b.capacity;
  });
  std::vector<StoredRecord> out;
  for (std::size_t i = 0; i < ranked.size() && i < limit; ++i) out.push_back(std::move(ranked[i].rec));
  return out;
}

Verdict verify(const std::string& candidate, const DesignSpec& spec, const CapacityFn& model,
               const RecordStore* store) {
  Verdict v;
  v.formula = candidate;
  Composition c;
  try {
    c = parse_formula(candidate);
    v.parsed = true;
    v.canonical = canonical_formula(c);
  } catch (const Error& e) {
    v.feedback = fmt::format("formula does not parse: {}", e.what());
    return v;
  }
  std::set<std::string> pool(spec.element_pool.begin(), spec.element_pool.end());
  for (const auto& e : c.elements()) {
    if (!pool.count(e)) {
      v.feedback = fmt::format("element {} is outside the allowed pool", e);
      return v;
    }
  }
  v.in_pool = true;
  try {
    v.predicted_capacity = model(c);
  } catch (const Error& e) {
    v.feedback = fmt::format("no capacity prediction: {}", e.what());
    return v;
  }
  const double p = *v.predicted_capacity;
  if (spec.require_novel) v.novel = !(store && store->contains_formula(v.canonical));

  std::string note;
  if (spec.temperature_window) {
    note = fmt::format("; operation within {}-{} K is not checked by the capacity model, confirm from literature",
                       format_trimmed(spec.temperature_window->first, 2),
                       format_trimmed(spec.temperature_window->second, 2));
  }
  if (p < spec.min_capacity) {
    v.feedback = fmt::format("predicted {} wt.% is {} wt.% below the {} wt.% target{}", format_trimmed(p, 2),
                             format_trimmed(spec.min_capacity - p, 2), format_trimmed(spec.min_capacity, 2), note);
    return v;
  }
  if (v.novel && !*v.novel) {
    v.feedback = fmt::format("{} is already in the database (not novel); predicted {} wt.%{}", candidate,
                             format_trimmed(p, 2), note);
    return v;
  }
  v.meets_targets = true;
  v.feedback = fmt::format("predicted {} wt.% meets the {} wt.% target by {} wt.%{}", format_trimmed(p, 2),
                           format_trimmed(spec.min_capacity, 2), format_trimmed(p - spec.min_capacity, 2), note);
  return v;
}

DesignTrace run_design(const DesignSpec& spec, DesignEngine& engine, const CapacityFn& model,
                       const RecordStore* store) {
  spec.validate();
  DesignTrace trace;
  trace.spec = spec;
  trace.engine = engine.name();
  const auto context = design_context(spec, store);
  FallbackEngine fallback;
  std::set<std::string> seen;

  for (int round = 0; round < spec.max_iterations; ++round) {
    std::vector<Candidate> proposed;
    try {
      proposed = engine.propose(spec, trace.iterations, context);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EmptyProposal) throw;
      spdlog::info("round {}: {}; using grid candidates", round + 1, e.what());
    }
    DesignIteration it;
    auto take = [&](const std::vector<Candidate>& from) {
      for (const auto& c : from) {
        if (static_cast<int>(it.candidates.size()) >= spec.candidates_per_round) break;
        if (seen.insert(key_of(c.formula)).second) it.candidates.push_back(c);
      }
    };
    take(proposed);
    if (it.candidates.empty()) {
      try {
        take(fallback.propose(spec, trace.iterations, context));
      } catch (const Error& e) {
        if (e.code() != ErrorCode::EmptyProposal) throw;
      }
    }
    if (it.candidates.empty()) break;  // nothing new left to try

    for (const auto& c : it.candidates) it.verdicts.push_back(verify(c.formula, spec, model, store));
    const Verdict* best = nullptr;
    for (const auto& v : it.verdicts) {
      if (!v.meets_targets) continue;
      if (!best || *v.predicted_capacity > *best->predicted_capacity ||
          (*v.predicted_capacity == *best->predicted_capacity && v.canonical < best->canonical)) {
        best = &v;
      }
    }
    if (best) {
      trace.success = true;
      trace.winner = *best;
    }
    trace.iterations.push_back(std::move(it));
    if (trace.success) break;
  }
  return trace;
}

json to_json(const Verdict& v) {
  return json{{"formula", v.formula},
              {"canonical", v.canonical.empty() ? json(nullptr) : json(v.canonical)},
              {"parsed", v.parsed},
              {"in_pool", v.in_pool},
              {"predicted_capacity", v.predicted_capacity ? json(*v.predicted_capacity) : json(nullptr)},
              {"novel", v.novel ? json(*v.novel) : json(nullptr)},
              {"meets_targets", v.meets_targets},
              {"feedback", v.feedback}};
}

json to_json(const DesignTrace& t) {
  json iterations = json::array();
  for (std::size_t i = 0; i < t.iterations.size(); ++i) {
    json cands = json::array();
    for (const auto& c : t.iterations[i].candidates) {
      cands.push_back({{"formula", c.formula}, {"rationale", c.rationale}, {"source", c.source}});
    }
    json verdicts = json::array();
    for (const auto& v : t.iterations[i].verdicts) verdicts.push_back(to_json(v));
    iterations.push_back({{"round", i + 1}, {"candidates", cands}, {"verdicts", verdicts}});
  }
  json outcome = t.success ? json{{"status", "success"},
                                  {"formula", t.winner->formula},
                                  {"canonical", t.winner->canonical},
                                  {"predicted_capacity", *t.winner->predicted_capacity}}
                           : json{{"status", "budget_exhausted"}};
  return json{{"spec", to_json(t.spec)}, {"engine", t.engine}, {"iterations", iterations}, {"outcome", outcome}};
}

std::string markdown_report(const DesignTrace& t) {
  std::string out = fmt::format("# Design report{}\n\n", t.spec.name.empty() ? "" : ": " + t.spec.name);
  out += fmt::format("Engine: {}\n\nTarget: at least {} wt.%", t.engine, format_trimmed(t.spec.min_capacity, 2));
  if (t.spec.temperature_window) {
    out += fmt::format(", {}-{} K", format_trimmed(t.spec.temperature_window->first, 2),
                       format_trimmed(t.spec.temperature_window->second, 2));
  }
  out += t.spec.require_novel ? ", novel materials only\n\n" : "\n\n";
  for (std::size_t i = 0; i < t.iterations.size(); ++i) {
    out += fmt::format("## Round {}\n\n| Candidate | Predicted wt.% | Novel | Meets | Feedback |\n|---|---|---|---|---|\n",
                       i + 1);
    const auto& it = t.iterations[i];
    for (const auto& v : it.verdicts) {
      out += fmt::format("| {} | {} | {} | {} | {} |\n", v.formula,
                         v.predicted_capacity ? format_trimmed(*v.predicted_capacity, 2) : "-",
                         v.novel ? (*v.novel ? "yes" : "no") : "-", v.meets_targets ? "yes" : "no", v.feedback);
    }
    out += '\n';
  }
  if (t.success) {
    out += fmt::format("**Result:** {} with a predicted {} wt.% after {} round(s).\n", t.winner->formula,
                       format_trimmed(*t.winner->predicted_capacity, 2), t.iterations.size());
  } else {
    out += fmt::format("**Result:** no candidate met the targets within {} round(s).\n", t.iterations.size());
  }
  return out;
}

}  // namespace dive
