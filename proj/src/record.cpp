#include "dive/record.hpp"

#include <algorithm>
#include <set>
#include <unordered_set>

#include <fmt/format.h>

#include "dive/error.hpp"
#include "dive/util.hpp"

namespace dive {

using nlohmann::json;

std::string_view to_string(MaterialClass c) {
  switch (c) {
    case MaterialClass::Interstitial: return "interstitial";
    case MaterialClass::Ionic: return "ionic";
    case MaterialClass::Complex: return "complex";
    case MaterialClass::Porous: return "porous";
    case MaterialClass::HighEntropy: return "high_entropy";
    case MaterialClass::Superhydride: return "superhydride";
    case MaterialClass::MultiComponent: return "multi_component";
    case MaterialClass::Other: return "other";
  }
  return "other";
}

std::string_view to_string(InterstitialSubtype s) {
  switch (s) {
    case InterstitialSubtype::AB2: return "AB2";
    case InterstitialSubtype::AB3: return "AB3";
    case InterstitialSubtype::AB5: return "AB5";
    case InterstitialSubtype::Other: return "other";
  }
  return "other";
}

std::string_view to_string(ExtractionMode m) {
  switch (m) {
    case ExtractionMode::Direct: return "direct";
    case ExtractionMode::Dive: return "dive";
    case ExtractionMode::Manual: return "manual";
  }
  return "manual";
}

std::string_view to_string(ReviewStatus s) {
  switch (s) {
    case ReviewStatus::Pending: return "pending";
    case ReviewStatus::Accepted: return "accepted";
    case ReviewStatus::Corrected: return "corrected";
    case ReviewStatus::Rejected: return "rejected";
  }
  return "pending";
}

namespace {

std::string normalize_token(std::string_view s) {
  std::string out;
  for (char c : to_lower_ascii(trim(s))) out.push_back(c == '-' || c == ' ' ? '_' : c);
  for (std::string_view suffix : {"_hydrides", "_hydride"}) {
    if (out.size() > suffix.size() && out.ends_with(suffix)) out.resize(out.size() - suffix.size());
  }
  return out;
}

template <typename E, std::size_t N>
std::optional<E> lookup_enum(std::string_view s, const std::array<E, N>& values) {
  auto key = normalize_token(s);
  for (E v : values) {
    if (normalize_token(to_string(v)) == key) return v;
  }
  return std::nullopt;
}

}  // namespace

std::optional<MaterialClass> parse_material_class(std::string_view s) {
  auto key = normalize_token(s);
  if (key == "multicomponent" || key == "multi_component") return MaterialClass::MultiComponent;
  if (key == "highentropy" || key == "high_entropy_alloy" || key == "hea") return MaterialClass::HighEntropy;
  if (key == "porous_material" || key == "mof" || key == "cof") return MaterialClass::Porous;
  return lookup_enum(s, std::array{MaterialClass::Interstitial, MaterialClass::Ionic, MaterialClass::Complex,
                                   MaterialClass::Porous, MaterialClass::HighEntropy, MaterialClass::Superhydride,
                                   MaterialClass::MultiComponent, MaterialClass::Other});
}

std::optional<InterstitialSubtype> parse_interstitial_subtype(std::string_view s) {
  auto key = to_lower_ascii(trim(s));
  if (key == "ab2") return InterstitialSubtype::AB2;
  if (key == "ab3") return InterstitialSubtype::AB3;
  if (key == "ab5") return InterstitialSubtype::AB5;
  if (key == "other") return InterstitialSubtype::Other;
  return std::nullopt;
}

std::optional<ExtractionMode> parse_extraction_mode(std::string_view s) {
  return lookup_enum(s, std::array{ExtractionMode::Direct, ExtractionMode::Dive, ExtractionMode::Manual});
}

std::optional<ReviewStatus> parse_review_status(std::string_view s) {
  return lookup_enum(s, std::array{ReviewStatus::Pending, ReviewStatus::Accepted, ReviewStatus::Corrected,
                                   ReviewStatus::Rejected});
}

std::string_view json_key(QuantityField f) {
  switch (f) {
    case QuantityField::Capacity: return "capacity_wt_pct";
    case QuantityField::Volumetric: return "volumetric_g_per_L";
    case QuantityField::AbsorptionPressure: return "absorption_pressure_bar";
    case QuantityField::DesorptionPressure: return "desorption_pressure_bar";
    case QuantityField::DesorptionTemperature: return "desorption_temperature_K";
    case QuantityField::MeasurementTemperature: return "measurement_temperature_K";
    case QuantityField::Cycles: return "cycles";
  }
  return "";
}

QuantityKind kind_of(QuantityField f) {
  switch (f) {
    case QuantityField::Capacity: return QuantityKind::Gravimetric;
    case QuantityField::Volumetric: return QuantityKind::Volumetric;
    case QuantityField::AbsorptionPressure:
    case QuantityField::DesorptionPressure: return QuantityKind::Pressure;
    case QuantityField::DesorptionTemperature:
    case QuantityField::MeasurementTemperature: return QuantityKind::Temperature;
    case QuantityField::Cycles: return QuantityKind::Cycles;
  }
  return QuantityKind::Cycles;
}

std::optional<Quantity>& MaterialRecord::field(QuantityField f) {
  return const_cast<std::optional<Quantity>&>(std::as_const(*this).field(f));
}

const std::optional<Quantity>& MaterialRecord::field(QuantityField f) const {
  switch (f) {
    case QuantityField::Capacity: return capacity_wt_pct;
    case QuantityField::Volumetric: return volumetric_g_per_L;
    case QuantityField::AbsorptionPressure: return absorption_pressure;
    case QuantityField::DesorptionPressure: return desorption_pressure;
    case QuantityField::DesorptionTemperature: return desorption_temperature;
    case QuantityField::MeasurementTemperature: return measurement_temperature;
    case QuantityField::Cycles: return cycles;
  }
  return cycles;
}

namespace {

constexpr std::string_view kFormulaFlag = "[formula-unparsed]";

// Canonical key first, then accepted aliases.
const std::vector<std::string_view>& aliases_for(QuantityField f) {
  static const std::vector<std::string_view> capacity = {"capacity_wt_pct", "capacity", "gravimetric_capacity",
                                                         "hydrogen_capacity", "capacity_wt"};
  static const std::vector<std::string_view> volumetric = {"volumetric_g_per_L", "volumetric_capacity",
                                                           "volumetric_density", "volumetric"};
  static const std::vector<std::string_view> abs_p = {"absorption_pressure_bar", "absorption_pressure",
                                                      "plateau_pressure_absorption"};
  static const std::vector<std::string_view> des_p = {"desorption_pressure_bar", "desorption_pressure",
                                                      "plateau_pressure_desorption"};
  static const std::vector<std::string_view> des_t = {"desorption_temperature_K", "desorption_temperature",
                                                      "peak_desorption_temperature"};
  static const std::vector<std::string_view> meas_t = {"measurement_temperature_K", "measurement_temperature",
                                                       "temperature"};
  static const std::vector<std::string_view> cyc = {"cycles", "cycle_count", "cycle_life"};
  switch (f) {
    case QuantityField::Capacity: return capacity;
    case QuantityField::Volumetric: return volumetric;
    case QuantityField::AbsorptionPressure: return abs_p;
    case QuantityField::DesorptionPressure: return des_p;
    case QuantityField::DesorptionTemperature: return des_t;
    case QuantityField::MeasurementTemperature: return meas_t;
    case QuantityField::Cycles: return cyc;
  }
  return cyc;
}

const std::vector<std::string_view> kFormulaKeys = {"formula", "formula_raw", "composition", "material"};
const std::vector<std::string_view> kClassKeys = {"material_class", "class", "material_type", "type"};
const std::vector<std::string_view> kSubtypeKeys = {"interstitial_subtype", "subtype", "structure_type"};
const std::vector<std::string_view> kIgnoredKeys = {"id", "version"};

bool is_blank_value(const json& v) {
  if (v.is_null()) return true;
  if (!v.is_string()) return false;
  auto s = to_lower_ascii(trim(v.get<std::string>()));
  return s.empty() || s == "n/a" || s == "na" || s == "null" || s == "none" || s == "-" || s == "unknown";
}

std::string value_text(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

void append_note(std::string& notes, std::string_view text) {
  if (text.empty()) return;
  if (!notes.empty()) notes += "; ";
  notes += text;
}

}  // namespace

std::vector<FieldViolation> check_invariants(const MaterialRecord& r) {
  std::vector<FieldViolation> v;
  for (auto f : kQuantityFields) {
    const auto& q = r.field(f);
    if (!q) continue;
    const auto key = std::string(json_key(f));
    if (q->canonical_unit != canonical_unit_of(kind_of(f))) {
      v.push_back({key, "not in canonical unit"});
      continue;
    }
    double x = q->canonical_value;
    if (!std::isfinite(x)) {
      v.push_back({key, "not finite"});
      continue;
    }
    switch (kind_of(f)) {
      case QuantityKind::Gravimetric:
        if (x < 0.0 || x > 100.0) v.push_back({key, fmt::format("{} wt.% outside [0, 100]", x)});
        break;
      case QuantityKind::Temperature:
        if (x <= 0.0) v.push_back({key, fmt::format("{} K is not above absolute zero", x)});
        break;
      case QuantityKind::Pressure:
        if (x < 0.0) v.push_back({key, fmt::format("{} bar is negative", x)});
        break;
      case QuantityKind::Volumetric:
        if (x < 0.0) v.push_back({key, fmt::format("{} g/L is negative", x)});
        break;
      case QuantityKind::Cycles:
        if (x < 0.0) v.push_back({key, "negative cycle count"});
        break;
    }
  }
  if (r.interstitial_subtype && r.material_class != MaterialClass::Interstitial) {
    v.push_back({"interstitial_subtype", "only allowed for interstitial materials"});
  }
  if (r.provenance.doi.empty()) v.push_back({"provenance", "doi must be non-empty"});
  if (r.formula_raw.empty()) v.push_back({"formula", "required"});
  return v;
}

ValidationResult validate_record(const json& raw, const std::optional<Provenance>& fallback) {
  ValidationFailure failure{{}, raw};
  if (!raw.is_object()) {
    failure.violations.push_back({"record", "not a JSON object"});
    return failure;
  }
  auto& violations = failure.violations;
  std::set<std::string, std::less<>> consumed(kIgnoredKeys.begin(), kIgnoredKeys.end());
  auto find_first = [&](const std::vector<std::string_view>& keys) -> const json* {
    const json* found = nullptr;
    for (auto k : keys) {
      auto it = raw.find(std::string(k));
      if (it == raw.end()) continue;
      if (found == nullptr) {
        found = &*it;
        consumed.emplace(k);
      }
    }
    return found;
  };

  MaterialRecord r;
  if (auto it = raw.find("notes"); it != raw.end()) {
    consumed.emplace("notes");
    if (it->is_string()) r.notes = it->get<std::string>();
    else if (!it->is_null()) r.notes = it->dump();
  }

  if (const json* f = find_first(kFormulaKeys); f != nullptr && f->is_string() && !trim(f->get<std::string>()).empty()) {
    r.formula_raw = std::string(trim(f->get<std::string>()));
  } else {
    violations.push_back({"formula", "required"});
  }

  if (const json* c = find_first(kClassKeys); c != nullptr && !is_blank_value(*c)) {
    if (auto mc = c->is_string() ? parse_material_class(c->get<std::string>()) : std::nullopt) {
      r.material_class = *mc;
    } else {
      append_note(r.notes, "material_class: " + value_text(*c));
    }
  }
  if (const json* s = find_first(kSubtypeKeys); s != nullptr && !is_blank_value(*s)) {
    if (auto st = s->is_string() ? parse_interstitial_subtype(s->get<std::string>()) : std::nullopt) {
      r.interstitial_subtype = *st;
    } else {
      violations.push_back({"interstitial_subtype", "unknown subtype '" + value_text(*s) + "'"});
    }
  }

  for (auto f : kQuantityFields) {
    const json* v = find_first(aliases_for(f));
    if (v == nullptr || is_blank_value(*v)) continue;
    const auto key = std::string(json_key(f));
    try {
      if (v->is_number()) {
        r.field(f) = canonical_quantity(v->get<double>(), kind_of(f));
      } else if (v->is_string()) {
        r.field(f) = parse_quantity(v->get<std::string>(), kind_of(f));
      } else {
        violations.push_back({key, "expected number or string"});
      }
    } catch (const Error& e) {
      violations.push_back({key, e.what()});
    }
  }

  if (auto it = raw.find("review_status"); it != raw.end()) {
    consumed.emplace("review_status");
    if (!it->is_null()) {
      auto st = it->is_string() ? parse_review_status(it->get<std::string>()) : std::nullopt;
      if (st) r.review_status = *st;
      else violations.push_back({"review_status", "unknown status '" + value_text(*it) + "'"});
    }
  }

  bool have_provenance = false;
  if (auto it = raw.find("provenance"); it != raw.end() && !it->is_null()) {
    consumed.emplace("provenance");
    try {
      r.provenance = provenance_from_json(*it);
      have_provenance = true;
    } catch (const Error& e) {
      violations.push_back({"provenance", e.what()});
    }
  } else if (fallback) {
    r.provenance = *fallback;
    have_provenance = true;
  } else {
    consumed.emplace("provenance");
    violations.push_back({"provenance", "missing"});
  }

  std::string extras;
  for (const auto& [k, v] : raw.items()) {
    if (consumed.count(k) != 0) continue;
    append_note(extras, k + ": " + value_text(v));
  }
  append_note(r.notes, extras);

  if (!r.formula_raw.empty()) {
    try {
      r.composition = parse_formula(r.formula_raw);
    } catch (const Error& e) {
      if (r.notes.find(kFormulaFlag) == std::string::npos) {
        append_note(r.notes, std::string(kFormulaFlag) + " " + e.what());
      }
    }
  }

  for (auto& v : check_invariants(r)) {
    if (v.field == "formula" || (v.field == "provenance" && !have_provenance)) continue;
    violations.push_back(std::move(v));
  }
  if (!violations.empty()) return failure;
  return r;
}

json to_json(const Provenance& p) {
  return json{{"doi", p.doi},
              {"figure_id", p.figure_id ? json(*p.figure_id) : json(nullptr)},
              {"extraction_mode", to_string(p.extraction_mode)},
              {"model_tag", p.model_tag},
              {"timestamp", format_utc(p.timestamp)}};
}

Provenance provenance_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::ValidationFailure, "provenance must be an object");
  Provenance p;
  try {
    p.doi = j.value("doi", std::string{});
    if (auto it = j.find("figure_id"); it != j.end() && it->is_string()) p.figure_id = it->get<std::string>();
    auto mode = parse_extraction_mode(j.value("extraction_mode", std::string{"manual"}));
    if (!mode) throw Error(ErrorCode::ValidationFailure, "unknown extraction_mode");
    p.extraction_mode = *mode;
    p.model_tag = j.value("model_tag", std::string{});
    if (auto it = j.find("timestamp"); it != j.end() && it->is_string()) p.timestamp = parse_utc(it->get<std::string>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ValidationFailure, std::string("bad provenance: ") + e.what());
  }
  if (p.doi.empty()) throw Error(ErrorCode::ValidationFailure, "provenance.doi must be non-empty");
  return p;
}

json to_json(const MaterialRecord& r) {
  json j = json::object();
  j["formula"] = r.formula_raw;
  j["material_class"] = to_string(r.material_class);
  j["interstitial_subtype"] = r.interstitial_subtype ? json(to_string(*r.interstitial_subtype)) : json(nullptr);
  for (auto f : kQuantityFields) {
    const auto& q = r.field(f);
    j[std::string(json_key(f))] = q ? json(q->canonical_value) : json(nullptr);
  }
  j["notes"] = r.notes;
  j["provenance"] = to_json(r.provenance);
  j["review_status"] = to_string(r.review_status);
  return j;
}

json to_json(const ValidationFailure& f) {
  json v = json::array();
  for (const auto& x : f.violations) v.push_back({{"field", x.field}, {"reason", x.reason}});
  return json{{"violations", v}, {"raw", f.raw}};
}

MaterialRecord record_from_json(const json& j) {
  auto result = validate_record(j);
  if (auto* failure = std::get_if<ValidationFailure>(&result)) {
    std::string msg = "invalid record";
    for (const auto& v : failure->violations) msg += "; " + v.field + ": " + v.reason;
    throw Error(ErrorCode::ValidationFailure, msg, to_json(*failure));
  }
  return std::get<MaterialRecord>(std::move(result));
}

std::string formula_key(const MaterialRecord& r) {
  return r.composition ? canonical_formula(*r.composition) : r.formula_raw;
}

std::string condition_signature(const MaterialRecord& r) {
  std::string sig;
  for (auto f : kQuantityFields) {
    const auto& q = r.field(f);
    if (!sig.empty()) sig += ';';
    if (q) sig += format_shortest(round_sig(q->canonical_value, 3));
  }
  return sig;
}

std::vector<MaterialRecord> dedup_records(std::vector<MaterialRecord> records) {
  std::unordered_set<std::string> seen;
  std::vector<MaterialRecord> out;
  out.reserve(records.size());
  for (auto& r : records) {
    if (seen.insert(formula_key(r) + "|" + condition_signature(r)).second) out.push_back(std::move(r));
  }
  return out;
}

}  // namespace dive
