#pragma once

#include <string>
#include <string_view>

namespace dive {

enum class QuantityKind { Temperature, Pressure, Gravimetric, Volumetric, Cycles };

enum class CanonicalUnit { Kelvin, Bar, WeightPercent, GramPerLiter, Cycles, Dimensionless };

std::string_view to_string(QuantityKind kind);
std::string_view to_string(CanonicalUnit unit);
CanonicalUnit canonical_unit_of(QuantityKind kind);

struct Quantity {
  double value = 0.0;
  std::string unit;  // normalized unit tag, e.g. "°C", "MPa", "wt.%"
  double canonical_value = 0.0;
  CanonicalUnit canonical_unit = CanonicalUnit::Dimensionless;

  friend bool operator==(const Quantity&, const Quantity&) = default;
};

/// Parses "300 °C", "1 MPa", "7.6 wt%", "40 g H2/L", "1500 cycles" and
/// converts to the canonical unit of `kind` (K, bar, wt.%, g/L, cycles).
/// A bare number is taken to be already in the canonical unit.
///
/// Throws UnparseableQuantity, or UnitKindMismatch when the unit is known but
/// belongs to another kind ("5 bar" as a temperature).
Quantity parse_quantity(std::string_view s, QuantityKind kind);

/// Quantity already expressed in the canonical unit of `kind`.
Quantity canonical_quantity(double canonical_value, QuantityKind kind);

/// Converts a value in `unit` (any recognized tag or alias) to canonical.
double to_canonical(double value, std::string_view unit, QuantityKind kind);
/// Inverse of to_canonical.
double from_canonical(double canonical_value, std::string_view unit, QuantityKind kind);

}  // namespace dive
