#pragma once
// Shared setup for the fixture corpus and the design scenario.

#include <filesystem>
#include <vector>

#include "dive/designer.hpp"
#include "dive/record.hpp"
#include "dive/store.hpp"
#include "dive/util.hpp"
#include "fixture_backend.hpp"

namespace dive::testing_support {

inline constexpr std::int64_t kFixtureTimestamp = 1700000000;

inline std::vector<std::filesystem::path> fixture_bundle_dirs(const std::filesystem::path& data) {
  return {data / "bundles" / "p1", data / "bundles" / "p2", data / "bundles" / "p3"};
}

inline void load_design_store(RecordStore& store, const std::filesystem::path& data) {
  std::vector<MaterialRecord> rows;
  for (const auto& j : read_jsonl(data / "design_store.jsonl")) rows.push_back(record_from_json(j));
  store.append(rows);
}

inline DesignSpec fe_co_mn_spec() {
  DesignSpec s;
  s.name = "fe-co-mn";
  s.element_pool = {"Mg", "Fe", "Co", "Mn", "Ca"};
  s.material_class = MaterialClass::Complex;
  s.min_capacity = 4.0;
  s.require_novel = true;
  s.max_iterations = 6;
  s.candidates_per_round = 1;
  return s;
}

inline CapacityFn design_stub_model() {
  return [](const Composition& c) { return design_stub_capacity(canonical_formula(c)); };
}

}  // namespace dive::testing_support
