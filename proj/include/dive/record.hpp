#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "dive/composition.hpp"
#include "dive/quantity.hpp"

namespace dive {

enum class MaterialClass { Interstitial, Ionic, Complex, Porous, HighEntropy, Superhydride, MultiComponent, Other };
enum class InterstitialSubtype { AB2, AB3, AB5, Other };
enum class ExtractionMode { Direct, Dive, Manual };
enum class ReviewStatus { Pending, Accepted, Corrected, Rejected };

std::string_view to_string(MaterialClass c);
std::string_view to_string(InterstitialSubtype s);
std::string_view to_string(ExtractionMode m);
std::string_view to_string(ReviewStatus s);

/// Lenient: case-insensitive, '-'/' ' treated as '_', trailing "hydride(s)" dropped.
std::optional<MaterialClass> parse_material_class(std::string_view s);
std::optional<InterstitialSubtype> parse_interstitial_subtype(std::string_view s);
std::optional<ExtractionMode> parse_extraction_mode(std::string_view s);
std::optional<ReviewStatus> parse_review_status(std::string_view s);

struct Provenance {
  std::string doi;
  std::optional<std::string> figure_id;
  ExtractionMode extraction_mode = ExtractionMode::Manual;
  std::string model_tag;
  std::int64_t timestamp = 0;  // unix seconds, UTC

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

/// The quantity-valued fields, in serialization order.
enum class QuantityField {
  Capacity,
  Volumetric,
  AbsorptionPressure,
  DesorptionPressure,
  DesorptionTemperature,
  MeasurementTemperature,
  Cycles,
};
inline constexpr std::size_t kQuantityFieldCount = 7;

std::string_view json_key(QuantityField f);
QuantityKind kind_of(QuantityField f);

struct MaterialRecord {
  std::string formula_raw;
  std::optional<Composition> composition;
  MaterialClass material_class = MaterialClass::Other;
  std::optional<InterstitialSubtype> interstitial_subtype;
  std::optional<Quantity> capacity_wt_pct;
  std::optional<Quantity> volumetric_g_per_L;
  std::optional<Quantity> absorption_pressure;
  std::optional<Quantity> desorption_pressure;
  std::optional<Quantity> desorption_temperature;
  std::optional<Quantity> measurement_temperature;
  std::optional<Quantity> cycles;
  std::string notes;
  Provenance provenance;
  ReviewStatus review_status = ReviewStatus::Pending;

  std::optional<Quantity>& field(QuantityField f);
  const std::optional<Quantity>& field(QuantityField f) const;

  friend bool operator==(const MaterialRecord&, const MaterialRecord&) = default;
};

inline constexpr std::array<QuantityField, kQuantityFieldCount> kQuantityFields = {
    QuantityField::Capacity,           QuantityField::Volumetric,          QuantityField::AbsorptionPressure,
    QuantityField::DesorptionPressure, QuantityField::DesorptionTemperature, QuantityField::MeasurementTemperature,
    QuantityField::Cycles};

struct FieldViolation {
  std::string field;
  std::string reason;

  friend bool operator==(const FieldViolation&, const FieldViolation&) = default;
};

/// Every violated constraint of one raw record, plus the raw input.
struct ValidationFailure {
  std::vector<FieldViolation> violations;
  nlohmann::json raw;
};

using ValidationResult = std::variant<MaterialRecord, ValidationFailure>;

/// Validates one flat key-value record as produced by an extraction model.
///
/// Quantities given as strings are parsed and canonicalized; JSON numbers are
/// taken as canonical. Common key aliases ("capacity", "temperature", ...) are
/// accepted, unknown keys are appended to `notes`. An unparseable formula does
/// not fail the record: composition is left absent and a flag is added to
/// `notes`. The record's own "provenance" object wins over `fallback`; with
/// neither, the record fails.
ValidationResult validate_record(const nlohmann::json& raw, const std::optional<Provenance>& fallback = std::nullopt);

/// Checks the record invariants (ranges, subtype/class consistency, doi).
std::vector<FieldViolation> check_invariants(const MaterialRecord& r);

/// Record JSONL representation: canonical numbers, fixed key names.
nlohmann::json to_json(const MaterialRecord& r);
nlohmann::json to_json(const Provenance& p);
/// Strict reader for the JSONL written by to_json. Throws ValidationFailure
/// (as Error) on bad input.
MaterialRecord record_from_json(const nlohmann::json& j);
Provenance provenance_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ValidationFailure& f);

/// Formula key used for dedup: canonical formula, or the raw string when the
/// composition did not parse.
std::string formula_key(const MaterialRecord& r);

/// Quantities rounded to 3 significant digits, in field order; identifies
/// "the same measurement" across restatements.
std::string condition_signature(const MaterialRecord& r);

/// Drops later records whose (formula_key, condition_signature) was seen.
std::vector<MaterialRecord> dedup_records(std::vector<MaterialRecord> records);

}  // namespace dive
