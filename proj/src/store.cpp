#include "dive/store.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "dive/error.hpp"
#include "dive/util.hpp"

namespace dive {

namespace fs = std::filesystem;
using nlohmann::json;

std::optional<ReviewActionKind> parse_review_action(std::string_view s) {
  auto t = to_lower_ascii(trim(s));
  if (t == "accept") return ReviewActionKind::Accept;
  if (t == "correct") return ReviewActionKind::Correct;
  if (t == "reject") return ReviewActionKind::Reject;
  return std::nullopt;
}

std::string_view to_string(ReviewActionKind k) {
  switch (k) {
    case ReviewActionKind::Accept: return "accept";
    case ReviewActionKind::Correct: return "correct";
    case ReviewActionKind::Reject: return "reject";
  }
  return "accept";
}

void QueryFilter::validate() const {
  for (const auto* r : {&capacity, &temperature}) {
    if (*r && !((*r)->lo <= (*r)->hi)) {
      throw Error(ErrorCode::InvalidArgument, fmt::format("range lo {} exceeds hi {}", (*r)->lo, (*r)->hi));
    }
  }
}

json to_json(const StoredRecord& r) {
  auto j = to_json(r.record);
  j["id"] = r.id;
  j["version"] = r.version;
  return j;
}

json to_json(const AuditEntry& a) {
  return json{{"id", a.id},
              {"version", a.version},
              {"action", a.action},
              {"reviewer", a.reviewer},
              {"timestamp", format_utc(a.timestamp)},
              {"prior", a.prior}};
}

namespace {

AuditEntry audit_from_json(const json& j) {
  AuditEntry a;
  a.id = j.at("id").get<RecordId>();
  a.version = j.at("version").get<int>();
  a.action = j.at("action").get<std::string>();
  a.reviewer = j.at("reviewer").get<std::string>();
  a.timestamp = parse_utc(j.at("timestamp").get<std::string>());
  a.prior = j.at("prior");
  return a;
}

std::vector<std::string> distinct_elements(const MaterialRecord& r) {
  return r.composition ? r.composition->elements() : std::vector<std::string>{};
}

const std::optional<Quantity>& temperature_of(const MaterialRecord& r) {
  return r.desorption_temperature ? r.desorption_temperature : r.measurement_temperature;
}

bool in_range(const std::optional<Quantity>& q, const Range& r) {
  return q && q->canonical_value >= r.lo && q->canonical_value <= r.hi;
}

constexpr std::array<MaterialClass, 8> kClasses = {
    MaterialClass::Interstitial,   MaterialClass::Ionic,       MaterialClass::Complex,
    MaterialClass::Porous,         MaterialClass::HighEntropy, MaterialClass::Superhydride,
    MaterialClass::MultiComponent, MaterialClass::Other};

}  // namespace

RecordStore::RecordStore(fs::path dir) : dir_(std::move(dir)) {
  try {
    fs::create_directories(dir_ / "segments");
    fs::create_directories(dir_ / "manifests");
    load();
  } catch (const Error& e) {
    throw Error(ErrorCode::StoreOpenFailure, "cannot open store " + dir_.string() + ": " + e.what(),
                {{"path", dir_.string()}, {"cause", to_string(e.code())}});
  } catch (const std::exception& e) {
    throw Error(ErrorCode::StoreOpenFailure, "cannot open store " + dir_.string() + ": " + e.what(),
                {{"path", dir_.string()}});
  }
}

void RecordStore::load() {
  std::vector<fs::path> segments;
  for (const auto& de : fs::directory_iterator(dir_ / "segments")) {
    const auto& p = de.path();
    if (p.extension() == ".tmp") {
      // an interrupted commit; it never became visible
      fs::remove(p);
      continue;
    }
    if (p.extension() == ".jsonl") segments.push_back(p);
  }
  std::sort(segments.begin(), segments.end());
  for (const auto& seg : segments) {
    for (const auto& line : read_jsonl(seg)) {
      StoredRecord rec;
      rec.id = line.at("id").get<RecordId>();
      rec.version = line.at("version").get<int>();
      rec.record = record_from_json(line.at("record"));
      if (auto it = line.find("audit"); it != line.end()) audit_.push_back(audit_from_json(*it));
      next_id_ = std::max(next_id_, rec.id + 1);
      apply(std::move(rec));
    }
    next_segment_ = std::max<std::uint64_t>(next_segment_, std::stoull(seg.stem().string()) + 1);
  }

  std::vector<fs::path> manifests;
  for (const auto& de : fs::directory_iterator(dir_ / "manifests")) {
    if (de.path().extension() == ".json") manifests.push_back(de.path());
  }
  std::sort(manifests.begin(), manifests.end());
  for (const auto& m : manifests) {
    auto j = json::parse(read_text_file(m));
    manifests_[j.value("doi", std::string{})].push_back(std::move(j));
  }

  std::vector<json> rows;
  for (const auto& a : audit_) rows.push_back(to_json(a));
  const auto audit_path = dir_ / "audit.jsonl";
  const auto want = to_jsonl(rows);
  if (!fs::exists(audit_path) || read_text_file(audit_path) != want) write_file_atomic(audit_path, want);
}

std::string RecordStore::dedup_key(const MaterialRecord& r) const {
  return r.provenance.doi + '\x1f' + formula_key(r) + '\x1f' + condition_signature(r);
}

void RecordStore::apply(StoredRecord rec) {
  if (auto it = entries_.find(rec.id); it != entries_.end()) {
    const auto& old = it->second;
    by_doi_[old.current.record.provenance.doi].erase(rec.id);
    by_formula_[formula_key(old.current.record)].erase(rec.id);
    for (const auto& e : old.elements) by_element_[e].erase(rec.id);
  }
  dedup_keys_.insert(dedup_key(rec.record));
  Entry e{rec, distinct_elements(rec.record)};
  by_doi_[rec.record.provenance.doi].insert(rec.id);
  by_formula_[formula_key(rec.record)].insert(rec.id);
  for (const auto& el : e.elements) by_element_[el].insert(rec.id);
  entries_[rec.id] = std::move(e);
}

void RecordStore::commit(const std::vector<json>& lines) {
  const auto final_path = dir_ / "segments" / fmt::format("{:06}.jsonl", next_segment_);
  auto tmp = final_path;
  tmp += ".tmp";
  try {
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw Error(ErrorCode::StorageIO, "cannot write " + tmp.string());
      out << to_jsonl(lines);
      out.flush();
      if (!out) throw Error(ErrorCode::StorageIO, "short write to " + tmp.string());
    }
    if (fault_hook_) fault_hook_("segment-written");
    std::error_code ec;
    fs::rename(tmp, final_path, ec);
    if (ec) throw Error(ErrorCode::StorageIO, "cannot commit " + final_path.string() + ": " + ec.message());
  } catch (...) {
    std::error_code ignored;
    fs::remove(tmp, ignored);
    throw;
  }
  ++next_segment_;
}

AppendResult RecordStore::append(const std::vector<MaterialRecord>& records) {
  std::unique_lock lock(mutex_);
  AppendResult res;
  std::set<std::string> batch_keys;
  std::vector<StoredRecord> fresh;
  std::vector<json> lines;
  RecordId id = next_id_;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (auto v = check_invariants(r); !v.empty()) {
      ValidationFailure f{v, to_json(r)};
      throw Error(ErrorCode::ValidationFailure, fmt::format("record {} of batch is invalid: {}", i, v[0].reason),
                  to_json(f));
    }
    auto key = dedup_key(r);
    if (dedup_keys_.count(key) || !batch_keys.insert(key).second) {
      res.skipped.push_back(i);
      continue;
    }
    // keep exactly what a reload would see
    auto row = to_json(r);
    StoredRecord s{id++, 1, record_from_json(row)};
    lines.push_back(json{{"id", s.id}, {"version", s.version}, {"record", std::move(row)}});
    fresh.push_back(std::move(s));
  }
  if (fresh.empty()) return res;
  commit(lines);
  for (auto& s : fresh) {
    res.ids.push_back(s.id);
    apply(std::move(s));
  }
  next_id_ = id;
  return res;
}

std::size_t RecordStore::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

std::vector<const RecordStore::Entry*> RecordStore::entries_in_id_order() const {
  std::vector<const Entry*> out;
  out.reserve(entries_.size());
  for (const auto& [_, e] : entries_) out.push_back(&e);
  return out;
}

std::vector<StoredRecord> RecordStore::all() const {
  std::shared_lock lock(mutex_);
  std::vector<StoredRecord> out;
  for (const auto* e : entries_in_id_order()) out.push_back(e->current);
  return out;
}

const RecordStore::Entry& RecordStore::entry(RecordId id) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) throw Error(ErrorCode::UnknownId, fmt::format("no record with id {}", id), {{"id", id}});
  return it->second;
}

StoredRecord RecordStore::get(RecordId id) const {
  std::shared_lock lock(mutex_);
  return entry(id).current;
}

std::vector<StoredRecord> RecordStore::query(const QueryFilter& f) const {
  f.validate();
  std::optional<std::string> canonical;
  if (f.formula) {
    try {
      canonical = canonical_formula(parse_formula(*f.formula));
    } catch (const Error&) {
      canonical = *f.formula;
    }
  }
  std::shared_lock lock(mutex_);
  std::vector<RecordId> candidates;
  if (f.doi) {
    if (auto it = by_doi_.find(*f.doi); it != by_doi_.end()) candidates.assign(it->second.begin(), it->second.end());
  } else {
    for (const auto& [id, _] : entries_) candidates.push_back(id);
  }
  std::vector<StoredRecord> out;
  for (auto id : candidates) {
    const auto& e = entries_.at(id);
    const auto& r = e.current.record;
    if (f.material_class && r.material_class != *f.material_class) continue;
    if (f.review_status && r.review_status != *f.review_status) continue;
    if (f.capacity && !in_range(r.capacity_wt_pct, *f.capacity)) continue;
    if (f.temperature && !in_range(temperature_of(r), *f.temperature)) continue;
    if (canonical && formula_key(r) != *canonical) continue;
    if (!f.elements.empty()) {
      bool all = std::all_of(f.elements.begin(), f.elements.end(), [&](const std::string& el) {
        return std::binary_search(e.elements.begin(), e.elements.end(), el);
      });
      if (!all) continue;
    }
    out.push_back(e.current);
  }
  return out;
}

bool RecordStore::contains_formula(std::string_view canonical) const {
  std::shared_lock lock(mutex_);
  auto it = by_formula_.find(canonical);
  return it != by_formula_.end() && !it->second.empty();
}

Histogram RecordStore::capacity_histogram(const std::vector<double>& edges) const {
  if (edges.size() < 2) throw Error(ErrorCode::BadBinEdges, "need at least two bin edges");
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (!std::isfinite(edges[i]) || (i > 0 && !(edges[i] > edges[i - 1]))) {
      throw Error(ErrorCode::BadBinEdges, "bin edges must be finite and strictly increasing", {{"edges", edges}});
    }
  }
  Histogram h;
  h.edges = edges;
  const auto bins = edges.size() - 1;
  h.totals.assign(bins, 0);
  for (auto c : kClasses) h.by_class[std::string(to_string(c))].assign(bins, 0);
  std::shared_lock lock(mutex_);
  for (const auto& [_, e] : entries_) {
    const auto& cap = e.current.record.capacity_wt_pct;
    if (!cap) {
      ++h.absent;
      continue;
    }
    const double v = cap->canonical_value;
    if (v < edges.front() || v >= edges.back()) {
      ++h.out_of_range;
      continue;
    }
    const auto bin = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), v) - edges.begin()) - 1;
    ++h.totals[bin];
    ++h.by_class[std::string(to_string(e.current.record.material_class))][bin];
  }
  return h;
}

std::vector<std::pair<std::string, std::size_t>> RecordStore::element_frequency(double lo, double hi) const {
  if (!(lo < hi)) throw Error(ErrorCode::InvalidArgument, "element_frequency needs lo < hi");
  std::map<std::string, std::size_t> counts;
  {
    std::shared_lock lock(mutex_);
    for (const auto& [_, e] : entries_) {
      const auto& cap = e.current.record.capacity_wt_pct;
      if (!cap || cap->canonical_value < lo || cap->canonical_value >= hi) continue;
      for (const auto& el : e.elements) {
        if (el != "H") ++counts[el];
      }
    }
  }
  std::vector<std::pair<std::string, std::size_t>> out(counts.begin(), counts.end());
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  return out;
}

std::vector<DopantStat> RecordStore::dopant_analysis(std::string_view base_formula, std::size_t top_k) const {
  if (top_k == 0) throw Error(ErrorCode::InvalidArgument, "top_k must be at least 1");
  const auto base = parse_formula(base_formula);
  std::vector<std::string> required;
  for (const auto& el : base.elements()) {
    if (el != "H") required.push_back(el);
  }
  if (required.empty()) throw Error(ErrorCode::InvalidArgument, "base formula has no host element");

  std::shared_lock lock(mutex_);
  // intersect the element postings, smallest first
  std::vector<const std::set<RecordId>*> postings;
  for (const auto& el : required) {
    auto it = by_element_.find(el);
    if (it == by_element_.end() || it->second.empty()) return {};
    postings.push_back(&it->second);
  }
  std::sort(postings.begin(), postings.end(), [](auto* a, auto* b) { return a->size() < b->size(); });
  std::vector<RecordId> ids(postings[0]->begin(), postings[0]->end());
  for (std::size_t k = 1; k < postings.size(); ++k) {
    std::erase_if(ids, [&](RecordId id) { return postings[k]->count(id) == 0; });
  }

  std::map<std::string, DopantStat> stats;
  for (auto id : ids) {
    const auto& e = entries_.at(id);
    const auto& r = e.current.record;
    for (const auto& el : e.elements) {
      if (el == "H" || base.contains(el)) continue;
      auto& s = stats[el];
      s.element = el;
      ++s.count;
      if (r.capacity_wt_pct) s.capacities.push_back(r.capacity_wt_pct->canonical_value);
      if (r.desorption_temperature) s.desorption_temperatures.push_back(r.desorption_temperature->canonical_value);
      if (r.absorption_pressure) s.absorption_pressures.push_back(r.absorption_pressure->canonical_value);
    }
  }
  std::vector<DopantStat> out;
  for (auto& [_, s] : stats) out.push_back(std::move(s));
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.count > b.count; });
  if (out.size() > top_k) out.resize(top_k);
  return out;
}

StoredRecord RecordStore::set_review(RecordId id, const ReviewAction& action, const std::string& reviewer,
                                     std::optional<std::int64_t> timestamp) {
  std::unique_lock lock(mutex_);
  const auto& current = entry(id).current;
  const auto status = current.record.review_status;
  StoredRecord next = current;
  next.version = current.version + 1;
  switch (action.kind) {
    case ReviewActionKind::Accept:
      if (status == ReviewStatus::Accepted) {
        throw Error(ErrorCode::Conflict, fmt::format("record {} is already accepted", id), {{"id", id}});
      }
      next.record.review_status = ReviewStatus::Accepted;
      break;
    case ReviewActionKind::Reject:
      if (status == ReviewStatus::Rejected) {
        throw Error(ErrorCode::Conflict, fmt::format("record {} is already rejected", id), {{"id", id}});
      }
      next.record.review_status = ReviewStatus::Rejected;
      break;
    case ReviewActionKind::Correct: {
      if (!action.correction || !action.correction->is_object()) {
        throw Error(ErrorCode::InvalidArgument, "correct needs a record object", {{"id", id}});
      }
      json raw = *action.correction;
      raw.erase("review_status");
      auto v = validate_record(raw, current.record.provenance);
      if (auto* f = std::get_if<ValidationFailure>(&v)) {
        throw Error(ErrorCode::ValidationFailure, fmt::format("correction of record {} is invalid", id), to_json(*f));
      }
      next.record = std::get<MaterialRecord>(std::move(v));
      next.record.review_status = ReviewStatus::Corrected;
      break;
    }
  }
  next.record = record_from_json(to_json(next.record));
  AuditEntry a{id, next.version, std::string(to_string(action.kind)), reviewer, timestamp.value_or(now_unix_seconds()),
               to_json(current.record)};
  commit({json{{"id", id}, {"version", next.version}, {"record", to_json(next.record)}, {"audit", to_json(a)}}});
  audit_.push_back(a);
  apply(next);

  std::vector<json> rows;
  for (const auto& e : audit_) rows.push_back(to_json(e));
  try {
    write_file_atomic(dir_ / "audit.jsonl", to_jsonl(rows));
  } catch (const Error& e) {
    // segments are authoritative; audit.jsonl is rebuilt on the next open
    spdlog::warn("audit mirror not updated: {}", e.what());
  }
  return next;
}

std::vector<AuditEntry> RecordStore::audit(std::optional<RecordId> id) const {
  std::shared_lock lock(mutex_);
  if (!id) return audit_;
  std::vector<AuditEntry> out;
  for (const auto& a : audit_) {
    if (a.id == *id) out.push_back(a);
  }
  return out;
}

std::vector<StoredRecord> RecordStore::review_queue() const {
  std::shared_lock lock(mutex_);
  std::vector<StoredRecord> out;
  for (const auto& [_, e] : entries_) {
    if (e.current.record.review_status == ReviewStatus::Pending) out.push_back(e.current);
  }
  return out;
}

void RecordStore::add_manifest(const json& manifest) {
  if (!manifest.is_object() || !manifest.contains("doi") || !manifest["doi"].is_string()) {
    throw Error(ErrorCode::InvalidArgument, "run manifest must be an object with a doi");
  }
  std::unique_lock lock(mutex_);
  const auto doi = manifest["doi"].get<std::string>();
  auto& list = manifests_[doi];
  const auto name = fmt::format("{}-{:03}.json", sha256_hex(doi).substr(0, 16), list.size());
  write_file_atomic(dir_ / "manifests" / name, manifest.dump(2) + "\n");
  list.push_back(manifest);
}

json RecordStore::descriptive_context(const std::string& doi, const std::optional<std::string>& figure_id) const {
  std::shared_lock lock(mutex_);
  json out = json::array();
  auto it = manifests_.find(doi);
  if (it == manifests_.end()) return out;
  for (const auto& m : it->second) {
    auto blocks = m.find("descriptive_blocks");
    if (blocks == m.end() || !blocks->is_array()) continue;
    for (const auto& b : *blocks) {
      if (figure_id && b.value("figure_id", std::string{}) != *figure_id) continue;
      out.push_back(b);
    }
  }
  return out;
}

json to_json(const Histogram& h) {
  return json{{"edges", h.edges},         {"by_class", h.by_class}, {"totals", h.totals},
              {"out_of_range", h.out_of_range}, {"absent", h.absent}};
}

json to_json(const DopantStat& d) {
  return json{{"element", d.element},
              {"count", d.count},
              {"capacities", d.capacities},
              {"desorption_temperatures", d.desorption_temperatures},
              {"absorption_pressures", d.absorption_pressures}};
}

json to_json(const QueryFilter& f) {
  json j = json::object();
  if (f.material_class) j["material_class"] = to_string(*f.material_class);
  if (!f.elements.empty()) j["elements"] = f.elements;
  if (f.capacity) j["capacity"] = {f.capacity->lo, f.capacity->hi};
  if (f.temperature) j["temperature"] = {f.temperature->lo, f.temperature->hi};
  if (f.doi) j["doi"] = *f.doi;
  if (f.review_status) j["review_status"] = to_string(*f.review_status);
  if (f.formula) j["formula"] = *f.formula;
  return j;
}

std::string export_jsonl(const RecordStore& store) {
  std::vector<json> rows;
  for (const auto& r : store.all()) rows.push_back(to_json(r));
  return to_jsonl(rows);
}

}  // namespace dive
