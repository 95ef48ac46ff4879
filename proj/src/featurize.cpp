#include "dive/featurize.hpp"

#include <cmath>

#include <fmt/format.h>

#include "dive/elements.hpp"
#include "dive/error.hpp"
#include "dive/util.hpp"

namespace dive {

namespace {
constexpr const char* kStatNames[kStatsPerProperty] = {"mean", "avg_dev", "min", "max", "range", "mode"};
}

FeatureSchema::FeatureSchema() {
  const auto& table = ElementTable::instance();
  for (std::size_t p = 0; p < kElementPropertyCount; ++p) {
    for (const char* stat : kStatNames) {
      names_.push_back(fmt::format("{} {}", stat, property_name(static_cast<ElementProperty>(p))));
    }
  }
  for (const auto& e : table.all()) names_.push_back("frac " + e.symbol);
  std::string blob;
  for (const auto& n : names_) blob += n + '\n';
  blob += table.digest();
  hash_ = sha256_hex(blob);
}

const FeatureSchema& FeatureSchema::current() {
  static const FeatureSchema schema;
  return schema;
}

std::vector<double> featurize(const Composition& c) {
  if (c.empty()) throw Error(ErrorCode::InvalidArgument, "cannot featurize an empty composition");
  const auto& table = ElementTable::instance();
  const auto fractions = c.fractions();

  struct Part {
    const Element* el;
    double f;
  };
  std::vector<Part> parts;
  for (const auto& [sym, f] : fractions) {
    const auto* el = table.find(sym);
    if (!el) throw Error(ErrorCode::UnknownElement, "unknown element " + sym, {{"element", sym}});
    parts.push_back({el, f});
  }
  // dominant element: largest fraction, ties to the lower atomic number
  const Part* dominant = &parts[0];
  for (const auto& p : parts) {
    if (p.f > dominant->f || (p.f == dominant->f && p.el->atomic_number < dominant->el->atomic_number)) dominant = &p;
  }

  std::vector<double> out;
  out.reserve(FeatureSchema::current().size());
  for (std::size_t pi = 0; pi < kElementPropertyCount; ++pi) {
    const auto prop = static_cast<ElementProperty>(pi);
    std::vector<double> values;
    for (const auto& p : parts) {
      auto v = p.el->property(prop);
      if (!v) {
        throw Error(ErrorCode::MissingProperty,
                    fmt::format("{} has no {} value", p.el->symbol, property_name(prop)),
                    {{"element", p.el->symbol}, {"property", property_name(prop)}});
      }
      values.push_back(*v);
    }
    double mean = 0.0;
    for (std::size_t i = 0; i < parts.size(); ++i) mean += parts[i].f * values[i];
    double dev = 0.0, lo = values[0], hi = values[0];
    for (std::size_t i = 0; i < parts.size(); ++i) {
      dev += parts[i].f * std::abs(values[i] - mean);
      lo = std::min(lo, values[i]);
      hi = std::max(hi, values[i]);
    }
    out.insert(out.end(), {mean, dev, lo, hi, hi - lo, *dominant->el->property(prop)});
  }
  std::vector<double> frac(table.size(), 0.0);
  for (const auto& p : parts) frac[static_cast<std::size_t>(p.el->atomic_number - 1)] = p.f;
  out.insert(out.end(), frac.begin(), frac.end());
  return out;
}

}  // namespace dive
