#pragma once

// Full-scan recomputations of the store analytics, plus a synthetic record
// generator that gives the dopant queries something to find.

#include <algorithm>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "dive/store.hpp"
#include "test_support.hpp"

namespace dive::testing_support {

inline std::vector<MaterialRecord> synthetic_store_records(std::size_t n, std::uint64_t seed) {
  static const std::vector<std::string> hosts = {"LaNi5", "MgH2", "Mg2Fe", "TiFe", "NaAlH4", "ZrMn2"};
  static const std::vector<std::string> dopants = {"Mg", "Ni", "Co", "Al", "Ce", "Mn", "Cu", "Ti", "V", "Fe", "La"};
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> host(0, hosts.size() - 1), dop(0, dopants.size() - 1);
  std::uniform_int_distribution<int> ndop(0, 2), step(1, 8), coin(0, 3);
  std::vector<MaterialRecord> out;
  while (out.size() < n) {
    auto r = random_record(rng, "10.5555/s" + std::to_string(out.size() % 97));
    if (coin(rng) != 0) {
      // host plus a few dopants, written out as a flat formula
      std::string f = hosts[host(rng)];
      for (int k = ndop(rng); k > 0; --k) f += dopants[dop(rng)] + "0." + std::to_string(step(rng));
      r.formula_raw = f;
      r.composition = parse_formula(f);
    }
    // inner edges get hit on purpose
    if (r.capacity_wt_pct && coin(rng) == 0) {
      r.capacity_wt_pct = canonical_quantity(static_cast<double>(4 * (rng() % 4)), QuantityKind::Gravimetric);
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline Histogram naive_histogram(const std::vector<StoredRecord>& all, const std::vector<double>& edges) {
  Histogram h;
  h.edges = edges;
  const std::size_t bins = edges.size() - 1;
  h.totals.assign(bins, 0);
  for (auto c : {"interstitial", "ionic", "complex", "porous", "high_entropy", "superhydride", "multi_component",
                 "other"}) {
    h.by_class[c].assign(bins, 0);
  }
  for (const auto& s : all) {
    const auto& cap = s.record.capacity_wt_pct;
    if (!cap) {
      ++h.absent;
      continue;
    }
    bool placed = false;
    for (std::size_t b = 0; b < bins; ++b) {
      if (cap->canonical_value >= edges[b] && cap->canonical_value < edges[b + 1]) {
        ++h.totals[b];
        ++h.by_class[std::string(to_string(s.record.material_class))][b];
        placed = true;
      }
    }
    if (!placed) ++h.out_of_range;
  }
  return h;
}

inline std::vector<std::pair<std::string, std::size_t>> naive_element_frequency(const std::vector<StoredRecord>& all,
                                                                              double lo, double hi) {
  std::map<std::string, std::size_t> counts;
  for (const auto& s : all) {
    const auto& r = s.record;
    if (!r.composition || !r.capacity_wt_pct) continue;
    const double c = r.capacity_wt_pct->canonical_value;
    if (c < lo || c >= hi) continue;
    for (const auto& [el, amt] : r.composition->amounts()) {
      if (el != "H") ++counts[el];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> out(counts.begin(), counts.end());
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  return out;
}

inline std::vector<DopantStat> naive_dopants(const std::vector<StoredRecord>& all, const std::string& base,
                                             std::size_t k) {
  const auto b = parse_formula(base);
  std::map<std::string, DopantStat> stats;
  for (const auto& s : all) {
    const auto& r = s.record;
    if (!r.composition) continue;
    bool has_base = true;
    for (const auto& el : b.elements()) {
      if (el != "H" && !r.composition->contains(el)) has_base = false;
    }
    if (!has_base) continue;
    for (const auto& [el, amt] : r.composition->amounts()) {
      if (el == "H" || b.contains(el)) continue;
      auto& d = stats[el];
      d.element = el;
      ++d.count;
      if (r.capacity_wt_pct) d.capacities.push_back(r.capacity_wt_pct->canonical_value);
      if (r.desorption_temperature) d.desorption_temperatures.push_back(r.desorption_temperature->canonical_value);
      if (r.absorption_pressure) d.absorption_pressures.push_back(r.absorption_pressure->canonical_value);
    }
  }
  std::vector<DopantStat> out;
  for (auto& [_, d] : stats) out.push_back(d);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& c) {
    return a.count != c.count ? a.count > c.count : a.element < c.element;
  });
  if (out.size() > k) out.resize(k);
  return out;
}

}  // namespace dive::testing_support
