#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace dive {

/// Element symbol -> amount. Every symbol is in the element table and every
/// amount is strictly positive; enforced on construction.
class Composition {
 public:
  Composition() = default;
  explicit Composition(std::map<std::string, double, std::less<>> amounts);

  const std::map<std::string, double, std::less<>>& amounts() const { return amounts_; }
  bool empty() const { return amounts_.empty(); }
  std::size_t size() const { return amounts_.size(); }
  double total() const;
  double amount(std::string_view symbol) const;
  bool contains(std::string_view symbol) const { return amounts_.find(symbol) != amounts_.end(); }
  std::vector<std::string> elements() const;

  Composition scaled(double k) const;

  /// Molar fractions computed from amounts quantized relative to the largest
  /// amount (1e-9 grid), so that k*c and c yield bit-identical fractions.
  std::map<std::string, double, std::less<>> fractions() const;

  friend bool operator==(const Composition&, const Composition&) = default;

 private:
  std::map<std::string, double, std::less<>> amounts_;
};

/// Parses formulas such as "Mg2Fe0.6Co0.2Mn0.2", "Mg(BH4)2", "La₀.₈Mg₀.₂Ni₅".
///
/// Grammar: element symbols with optional decimal subscripts (ASCII or Unicode
/// subscript digits), () and [] groups with multipliers, whitespace and
/// interpuncts ignored. Hydrate coefficients after an interpunct, charges and
/// isotope labels are rejected as SyntaxError. Errors carry the byte offset in
/// `details["offset"]`.
Composition parse_formula(std::string_view s);

/// Dedup / novelty key: alphabetical symbols, amounts divided by the smallest
/// amount, at most 4 decimals. {La:0.8, Mg:0.2, Ni:5} -> "La4Mg1Ni25".
std::string canonical_formula(const Composition& c);

/// Human-readable formula with exact (round-trippable) amounts, amount 1
/// omitted, alphabetical order: {Mg:2, Fe:1} -> "FeMg2".
std::string format_formula(const Composition& c);

}  // namespace dive
