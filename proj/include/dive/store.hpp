#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dive/record.hpp"

namespace dive {

using RecordId = std::uint64_t;

struct StoredRecord {
  RecordId id = 0;
  int version = 1;
  MaterialRecord record;

  friend bool operator==(const StoredRecord&, const StoredRecord&) = default;
};

struct AuditEntry {
  RecordId id = 0;
  int version = 0;  // version produced by the action
  std::string action;
  std::string reviewer;
  std::int64_t timestamp = 0;
  nlohmann::json prior;  // record before the action

  friend bool operator==(const AuditEntry&, const AuditEntry&) = default;
};

struct AppendResult {
  std::vector<RecordId> ids;
  std::vector<std::size_t> skipped;  // batch indices of duplicates
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

/// Conjunction of the provided criteria; ranges are inclusive.
struct QueryFilter {
  std::optional<MaterialClass> material_class;
  std::set<std::string> elements;  // record must contain all
  std::optional<Range> capacity;
  std::optional<Range> temperature;  // desorption, else measurement temperature
  std::optional<std::string> doi;
  std::optional<ReviewStatus> review_status;
  std::optional<std::string> formula;  // canonical formula match

  void validate() const;  // InvalidArgument when lo > hi
};

/// Counts per half-open bin [edges[i], edges[i+1]), per material class.
struct Histogram {
  std::vector<double> edges;
  std::map<std::string, std::vector<std::size_t>> by_class;
  std::vector<std::size_t> totals;
  std::size_t out_of_range = 0;
  std::size_t absent = 0;

  friend bool operator==(const Histogram&, const Histogram&) = default;
};

struct DopantStat {
  std::string element;
  std::size_t count = 0;
  std::vector<double> capacities;              // wt.%
  std::vector<double> desorption_temperatures; // K
  std::vector<double> absorption_pressures;    // bar

  friend bool operator==(const DopantStat&, const DopantStat&) = default;
};

enum class ReviewActionKind { Accept, Correct, Reject };

struct ReviewAction {
  ReviewActionKind kind = ReviewActionKind::Accept;
  std::optional<nlohmann::json> correction;  // raw record for Correct
};

std::optional<ReviewActionKind> parse_review_action(std::string_view s);
std::string_view to_string(ReviewActionKind k);

/// Store directory layout:
///   segments/NNNNNN.jsonl  one file per committed batch, written to a temp
///                          name and renamed; lines {id, version, record, audit?}
///   audit.jsonl            every audit entry, rewritten after review commits
///   manifests/*.json       run manifests imported alongside records
///
/// Readers take a shared lock on committed in-memory state; every mutation
/// holds the writer lock across file commit and index update.
class RecordStore {
 public:
  /// Opens or creates the directory. Throws StoreOpenFailure.
  explicit RecordStore(std::filesystem::path dir);
  RecordStore(const RecordStore&) = delete;
  RecordStore& operator=(const RecordStore&) = delete;

  const std::filesystem::path& dir() const { return dir_; }

  AppendResult append(const std::vector<MaterialRecord>& records);

  std::size_t size() const;
  std::vector<StoredRecord> all() const;
  StoredRecord get(RecordId id) const;  // UnknownId
  std::vector<StoredRecord> query(const QueryFilter& f) const;
  bool contains_formula(std::string_view canonical) const;

  Histogram capacity_histogram(const std::vector<double>& edges) const;
  /// Element -> count of records with capacity in [lo, hi), H excluded;
  /// descending count, ties by symbol.
  std::vector<std::pair<std::string, std::size_t>> element_frequency(double lo, double hi) const;
  std::vector<DopantStat> dopant_analysis(std::string_view base_formula, std::size_t top_k) const;

  /// Accepting an accepted record or rejecting a rejected one is a Conflict.
  StoredRecord set_review(RecordId id, const ReviewAction& action, const std::string& reviewer,
                          std::optional<std::int64_t> timestamp = std::nullopt);
  std::vector<AuditEntry> audit(std::optional<RecordId> id = std::nullopt) const;

  /// Pending records, oldest first.
  std::vector<StoredRecord> review_queue() const;

  void add_manifest(const nlohmann::json& manifest);
  /// Descriptive blocks from imported manifests for this doi (and figure).
  nlohmann::json descriptive_context(const std::string& doi, const std::optional<std::string>& figure_id) const;

  /// Called between writing a segment's temp file and renaming it; a hook
  /// that throws leaves the store exactly as before the commit.
  void set_fault_hook(std::function<void(std::string_view stage)> hook) { fault_hook_ = std::move(hook); }

 private:
  struct Entry {
    StoredRecord current;
    std::vector<std::string> elements;  // distinct, sorted
  };

  void load();
  void commit(const std::vector<nlohmann::json>& lines);
  void apply(StoredRecord rec);
  std::string dedup_key(const MaterialRecord& r) const;
  const Entry& entry(RecordId id) const;
  std::vector<const Entry*> entries_in_id_order() const;

  std::filesystem::path dir_;
  mutable std::shared_mutex mutex_;
  std::map<RecordId, Entry> entries_;
  std::map<std::string, std::set<RecordId>, std::less<>> by_doi_;
  std::map<std::string, std::set<RecordId>, std::less<>> by_formula_;
  std::map<std::string, std::set<RecordId>, std::less<>> by_element_;
  std::set<std::string> dedup_keys_;
  std::vector<AuditEntry> audit_;
  std::map<std::string, std::vector<nlohmann::json>> manifests_;  // doi -> manifests
  RecordId next_id_ = 1;
  std::uint64_t next_segment_ = 1;
  std::function<void(std::string_view)> fault_hook_;
};

nlohmann::json to_json(const StoredRecord& r);
nlohmann::json to_json(const AuditEntry& a);
nlohmann::json to_json(const Histogram& h);
nlohmann::json to_json(const DopantStat& d);
nlohmann::json to_json(const QueryFilter& f);

/// Merged JSONL of current records, each with an "id" key.
std::string export_jsonl(const RecordStore& store);

}  // namespace dive
