#pragma once

#include <string>
#include <vector>

#include "dive/composition.hpp"

namespace dive {

/// Feature layout: for each element property (table order) the six
/// fraction-weighted statistics mean, avg_dev, min, max, range, mode; then
/// the molar fraction of every element H..Lr.
class FeatureSchema {
 public:
  static const FeatureSchema& current();

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  /// sha256 over the names and the element table digest.
  const std::string& hash() const { return hash_; }

 private:
  FeatureSchema();
  std::vector<std::string> names_;
  std::string hash_;
};

inline constexpr std::size_t kStatsPerProperty = 6;

/// Throws UnknownElement or MissingProperty (details: element, property).
std::vector<double> featurize(const Composition& c);

}  // namespace dive
