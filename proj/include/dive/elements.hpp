#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dive {

/// Per-element properties used by the composition featurizer. Values come
/// from the Magpie element tables (see data/README.md); order is part of the
/// feature schema.
enum class ElementProperty {
  AtomicNumber,
  AtomicWeight,
  Row,
  Group,
  CovalentRadius,
  Electronegativity,
  NsValence,
  NpValence,
  NdValence,
  NfValence,
  NValence,
  MeltingT,
};

inline constexpr std::size_t kElementPropertyCount = 12;

std::string_view property_name(ElementProperty p);

struct Element {
  std::string symbol;
  int atomic_number = 0;
  double atomic_weight = 0.0;
  std::array<std::optional<double>, kElementPropertyCount> properties{};

  std::optional<double> property(ElementProperty p) const { return properties[static_cast<std::size_t>(p)]; }
};

/// The embedded table of the 103 elements H..Lr, indexed by atomic number - 1.
class ElementTable {
 public:
  static const ElementTable& instance();

  const Element* find(std::string_view symbol) const;
  const Element& by_number(int atomic_number) const { return elements_.at(static_cast<std::size_t>(atomic_number - 1)); }
  const std::vector<Element>& all() const { return elements_; }
  std::size_t size() const { return elements_.size(); }

  /// sha256 of the raw data asset; changes whenever any property value does.
  const std::string& digest() const { return digest_; }

 private:
  ElementTable();
  std::vector<Element> elements_;
  std::string digest_;
};

}  // namespace dive
