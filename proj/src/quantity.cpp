#include "dive/quantity.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <optional>

#include <fmt/format.h>

#include "dive/error.hpp"
#include "dive/util.hpp"

namespace dive {

std::string_view to_string(QuantityKind kind) {
  switch (kind) {
    case QuantityKind::Temperature: return "temperature";
    case QuantityKind::Pressure: return "pressure";
    case QuantityKind::Gravimetric: return "gravimetric";
    case QuantityKind::Volumetric: return "volumetric";
    case QuantityKind::Cycles: return "cycles";
  }
  return "?";
}

std::string_view to_string(CanonicalUnit unit) {
  switch (unit) {
    case CanonicalUnit::Kelvin: return "K";
    case CanonicalUnit::Bar: return "bar";
    case CanonicalUnit::WeightPercent: return "wt.%";
    case CanonicalUnit::GramPerLiter: return "g/L";
    case CanonicalUnit::Cycles: return "cycles";
    case CanonicalUnit::Dimensionless: return "dimensionless";
  }
  return "?";
}

CanonicalUnit canonical_unit_of(QuantityKind kind) {
  switch (kind) {
    case QuantityKind::Temperature: return CanonicalUnit::Kelvin;
    case QuantityKind::Pressure: return CanonicalUnit::Bar;
    case QuantityKind::Gravimetric: return CanonicalUnit::WeightPercent;
    case QuantityKind::Volumetric: return CanonicalUnit::GramPerLiter;
    case QuantityKind::Cycles: return CanonicalUnit::Cycles;
  }
  return CanonicalUnit::Dimensionless;
}

namespace {

// canonical = value * scale + offset
struct UnitDef {
  std::string_view tag;
  QuantityKind kind;
  double scale;
  double offset;
};

constexpr std::array<UnitDef, 16> kUnits = {{
    {"K", QuantityKind::Temperature, 1.0, 0.0},
    {"°C", QuantityKind::Temperature, 1.0, 273.15},
    {"°F", QuantityKind::Temperature, 5.0 / 9.0, 273.15 - 32.0 * 5.0 / 9.0},
    {"bar", QuantityKind::Pressure, 1.0, 0.0},
    {"mbar", QuantityKind::Pressure, 1e-3, 0.0},
    {"Pa", QuantityKind::Pressure, 1e-5, 0.0},
    {"kPa", QuantityKind::Pressure, 1e-2, 0.0},
    {"MPa", QuantityKind::Pressure, 10.0, 0.0},
    {"GPa", QuantityKind::Pressure, 1e4, 0.0},
    {"atm", QuantityKind::Pressure, 1.01325, 0.0},
    {"wt.%", QuantityKind::Gravimetric, 1.0, 0.0},
    {"g/L", QuantityKind::Volumetric, 1.0, 0.0},
    {"kg/m3", QuantityKind::Volumetric, 1.0, 0.0},
    {"g/cm3", QuantityKind::Volumetric, 1000.0, 0.0},
    {"cycles", QuantityKind::Cycles, 1.0, 0.0},
    {"torr", QuantityKind::Pressure, 1.01325 / 760.0, 0.0},
}};

struct Alias {
  std::string_view spelled;
  std::string_view tag;
};

// Matched after lower-casing and removing spaces.
constexpr std::array<Alias, 33> kAliases = {{
    {"k", "K"},          {"kelvin", "K"},      {"°c", "°C"},         {"℃", "°C"},
    {"c", "°C"},         {"degc", "°C"},       {"oc", "°C"},         {"°f", "°F"},
    {"bar", "bar"},      {"bars", "bar"},      {"mbar", "mbar"},     {"pa", "Pa"},
    {"kpa", "kPa"},      {"mpa", "MPa"},       {"gpa", "GPa"},       {"atm", "atm"},
    {"torr", "torr"},    {"wt.%", "wt.%"},     {"wt%", "wt.%"},      {"mass%", "wt.%"},
    {"%", "wt.%"},       {"wt.pct", "wt.%"},   {"g/l", "g/L"},       {"gh2/l", "g/L"},
    {"gh₂/l", "g/L"},    {"kg/m3", "kg/m3"},   {"kg/m^3", "kg/m3"},  {"kg/m³", "kg/m3"},
    {"kgh2/m3", "kg/m3"}, {"g/cm3", "g/cm3"},  {"g/cm^3", "g/cm3"},  {"cycles", "cycles"},
    {"cycle", "cycles"},
}};

const UnitDef* find_tag(std::string_view tag) {
  for (const auto& u : kUnits) {
    if (u.tag == tag) return &u;
  }
  return nullptr;
}

const UnitDef* lookup_unit(std::string_view spelled) {
  std::string key;
  for (char c : to_lower_ascii(spelled)) {
    if (c != ' ' && c != '\t') key.push_back(c);
  }
  // "MPa" lower-cases to "mpa", "mbar" stays: both unambiguous.
  for (const auto& a : kAliases) {
    if (a.spelled == key) return find_tag(a.tag);
  }
  return nullptr;
}

const UnitDef& unit_for(std::string_view unit, QuantityKind kind) {
  const UnitDef* u = find_tag(unit);
  if (u == nullptr) u = lookup_unit(unit);
  if (u == nullptr) {
    throw Error(ErrorCode::UnparseableQuantity, fmt::format("unknown unit '{}'", unit), {{"unit", unit}});
  }
  if (u->kind != kind) {
    throw Error(ErrorCode::UnitKindMismatch,
                fmt::format("unit '{}' is a {} unit, expected {}", unit, to_string(u->kind), to_string(kind)),
                {{"unit", unit}, {"expected", to_string(kind)}});
  }
  return *u;
}

}  // namespace

double to_canonical(double value, std::string_view unit, QuantityKind kind) {
  const auto& u = unit_for(unit, kind);
  return value * u.scale + u.offset;
}

double from_canonical(double canonical_value, std::string_view unit, QuantityKind kind) {
  const auto& u = unit_for(unit, kind);
  return (canonical_value - u.offset) / u.scale;
}

Quantity canonical_quantity(double canonical_value, QuantityKind kind) {
  const auto cu = canonical_unit_of(kind);
  return Quantity{canonical_value, std::string(to_string(cu)), canonical_value, cu};
}

Quantity parse_quantity(std::string_view s, QuantityKind kind) {
  auto text = trim(s);
  if (text.empty()) throw Error(ErrorCode::UnparseableQuantity, "empty quantity");

  // Accept a leading Unicode minus as '-'.
  std::string number_text;
  std::size_t pos = 0;
  if (text.substr(0, 3) == "\xE2\x88\x92") {
    number_text = "-";
    pos = 3;
  }
  std::size_t num_start = pos;
  while (pos < text.size()) {
    char c = text[pos];
    bool ok = (c >= '0' && c <= '9') || c == '.' || ((c == '-' || c == '+') && pos == num_start) ||
              ((c == 'e' || c == 'E') && pos > num_start && pos + 1 < text.size() &&
               (std::isdigit(static_cast<unsigned char>(text[pos + 1])) || text[pos + 1] == '-' ||
                text[pos + 1] == '+'));
    if (!ok) {
      if ((c == '-' || c == '+') && pos > num_start && (text[pos - 1] == 'e' || text[pos - 1] == 'E')) ok = true;
    }
    if (!ok) break;
    number_text.push_back(c);
    ++pos;
  }
  double value = 0.0;
  {
    const char* b = number_text.data();
    const char* e = b + number_text.size();
    if (!number_text.empty() && number_text.front() == '+') ++b;
    auto [ptr, ec] = std::from_chars(b, e, value);
    if (number_text.empty() || ec != std::errc{} || ptr != e || !std::isfinite(value)) {
      throw Error(ErrorCode::UnparseableQuantity, fmt::format("no numeric value in '{}'", s), {{"input", s}});
    }
  }
  auto unit_text = trim(text.substr(pos));

  if (kind == QuantityKind::Cycles) {
    if (!unit_text.empty()) unit_for(unit_text, kind);
    if (value < 0 || std::floor(value) != value) {
      throw Error(ErrorCode::UnparseableQuantity, fmt::format("cycle count must be a whole number: '{}'", s));
    }
    return canonical_quantity(value, kind);
  }
  if (unit_text.empty()) return canonical_quantity(value, kind);

  const auto& u = unit_for(unit_text, kind);
  return Quantity{value, std::string(u.tag), value * u.scale + u.offset, canonical_unit_of(kind)};
}

}  // namespace dive
