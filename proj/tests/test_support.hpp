#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <random>
#include <string>

#include "dive/composition.hpp"
#include "dive/elements.hpp"
#include "dive/quantity.hpp"
#include "dive/record.hpp"

namespace dive::testing_support {

inline std::filesystem::path data_dir() { return DIVE_TEST_DATA; }

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "dive") {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(stamp) + "-" + std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

// 1-5 distinct elements from H..Bi with amounts in (0.05, 10) on a 0.05 grid.
inline Composition random_composition(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> count(1, 5), z(1, 83), step(1, 200);
  std::map<std::string, double, std::less<>> amounts;
  const int n = count(rng);
  while (static_cast<int>(amounts.size()) < n) {
    amounts[ElementTable::instance().by_number(z(rng)).symbol] = step(rng) * 0.05;
  }
  return Composition(std::move(amounts));
}

inline MaterialRecord random_record(std::mt19937_64& rng, const std::string& doi) {
  MaterialRecord r;
  r.composition = random_composition(rng);
  r.formula_raw = format_formula(*r.composition);
  std::uniform_int_distribution<int> cls(0, 7), coin(0, 1), sub(0, 3);
  r.material_class = static_cast<MaterialClass>(cls(rng));
  if (r.material_class == MaterialClass::Interstitial && coin(rng)) {
    r.interstitial_subtype = static_cast<InterstitialSubtype>(sub(rng));
  }
  std::uniform_real_distribution<double> cap(0.0, 12.0), vol(0.0, 150.0), pres(0.0, 100.0), temp(50.0, 800.0);
  std::uniform_int_distribution<int> cycles(1, 2000);
  auto maybe = [&](QuantityField f, double v) {
    if (coin(rng)) r.field(f) = canonical_quantity(v, kind_of(f));
  };
  maybe(QuantityField::Capacity, cap(rng));
  maybe(QuantityField::Volumetric, vol(rng));
  maybe(QuantityField::AbsorptionPressure, pres(rng));
  maybe(QuantityField::DesorptionPressure, pres(rng));
  maybe(QuantityField::DesorptionTemperature, temp(rng));
  maybe(QuantityField::MeasurementTemperature, temp(rng));
  maybe(QuantityField::Cycles, static_cast<double>(cycles(rng)));
  r.provenance.doi = doi;
  r.provenance.extraction_mode = ExtractionMode::Manual;
  r.provenance.timestamp = 1700000000;
  return r;
}

}  // namespace dive::testing_support
