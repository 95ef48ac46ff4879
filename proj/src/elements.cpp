#include "dive/elements.hpp"

#include <charconv>

#include "dive/assets.hpp"
#include "dive/error.hpp"
#include "dive/util.hpp"

namespace dive {

std::string_view property_name(ElementProperty p) {
  static constexpr std::array<std::string_view, kElementPropertyCount> names = {
      "Number",    "AtomicWeight", "Row",       "Column",    "CovalentRadius", "Electronegativity",
      "NsValence", "NpValence",    "NdValence", "NfValence", "NValence",       "MeltingT"};
  return names[static_cast<std::size_t>(p)];
}

namespace {

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

double to_double(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw Error(ErrorCode::InvalidArgument, "bad number in element table: " + std::string(s));
  }
  return v;
}

}  // namespace

ElementTable::ElementTable() {
  const auto& assets = assets::embedded();
  auto it = assets.find("data/elements.csv");
  if (it == assets.end()) throw Error(ErrorCode::MissingFile, "element table asset missing");
  std::string_view csv = it->second;
  digest_ = sha256_hex(csv);

  std::size_t start = csv.find('\n') + 1;  // skip header
  while (start < csv.size()) {
    auto end = csv.find('\n', start);
    if (end == std::string_view::npos) end = csv.size();
    auto line = trim(csv.substr(start, end - start));
    start = end + 1;
    if (line.empty()) continue;
    auto cols = split_csv(line);
    if (cols.size() != 1 + kElementPropertyCount) {
      throw Error(ErrorCode::InvalidArgument, "element table row has wrong arity: " + std::string(line));
    }
    Element e;
    e.symbol = std::string(cols[0]);
    for (std::size_t p = 0; p < kElementPropertyCount; ++p) {
      if (!cols[p + 1].empty()) e.properties[p] = to_double(cols[p + 1]);
    }
    e.atomic_number = static_cast<int>(*e.property(ElementProperty::AtomicNumber));
    e.atomic_weight = *e.property(ElementProperty::AtomicWeight);
    if (e.atomic_number != static_cast<int>(elements_.size()) + 1) {
      throw Error(ErrorCode::InvalidArgument, "element table out of order at " + e.symbol);
    }
    elements_.push_back(std::move(e));
  }
}

const ElementTable& ElementTable::instance() {
  static const ElementTable table;
  return table;
}

const Element* ElementTable::find(std::string_view symbol) const {
  for (const auto& e : elements_) {
    if (e.symbol == symbol) return &e;
  }
  return nullptr;
}

}  // namespace dive
