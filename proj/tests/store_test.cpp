#include <gtest/gtest.h>

#include <atomic>
#include <fstream>
#include <sstream>
#include <thread>

#include "dive/error.hpp"
#include "dive/store.hpp"
#include "dive/util.hpp"
#include "store_oracle.hpp"
#include "test_support.hpp"

using namespace dive;
using namespace dive::testing_support;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

MaterialRecord mk(const std::string& formula, MaterialClass cls, std::optional<double> cap,
                  std::optional<double> t_des = std::nullopt, const std::string& doi = "10.1/a") {
  MaterialRecord r;
  r.formula_raw = formula;
  r.composition = parse_formula(formula);
  r.material_class = cls;
  if (cap) r.capacity_wt_pct = canonical_quantity(*cap, QuantityKind::Gravimetric);
  if (t_des) r.desorption_temperature = canonical_quantity(*t_des, QuantityKind::Temperature);
  r.provenance.doi = doi;
  r.provenance.extraction_mode = ExtractionMode::Dive;
  r.provenance.model_tag = "m";
  r.provenance.timestamp = 1700000000;
  return r;
}

std::vector<RecordId> ids_of(const std::vector<StoredRecord>& rs) {
  std::vector<RecordId> out;
  for (const auto& r : rs) out.push_back(r.id);
  return out;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const dive::Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no dive::Error thrown";
  return ErrorCode::InvalidArgument;
}

std::vector<MaterialRecord> query_fixture() {
  using C = MaterialClass;
  return {
      mk("MgH2", C::Ionic, 7.6, 573.15, "10.1/a"),          // 1
      mk("Mg2FeH6", C::Complex, 5.5, 593.0, "10.1/a"),      // 2
      mk("LaNi5", C::Interstitial, 1.4, 298.0, "10.1/b"),   // 3
      mk("Mg2Ni", C::Complex, 3.6, std::nullopt, "10.1/b"), // 4
      mk("NaAlH4", C::Complex, 5.6, 423.0, "10.1/c"),       // 5
      mk("MgH2Ni0.1", C::Ionic, 8.5, 550.0, "10.1/c"),      // 6
  };
}

std::string segment_snapshot(const fs::path& dir) {
  std::string s;
  std::vector<fs::path> files;
  for (const auto& de : fs::recursive_directory_iterator(dir)) {
    if (de.is_regular_file()) files.push_back(de.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) s += f.string() + "\n" + read_text_file(f);
  return s;
}

}  // namespace

TEST(Append, DedupIdempotent) {
  TempDir t;
  RecordStore s(t.path());
  auto batch = query_fixture();
  batch.resize(3);
  const auto first = s.append(batch);
  EXPECT_EQ(first.ids, (std::vector<RecordId>{1, 2, 3}));
  EXPECT_TRUE(first.skipped.empty());
  const auto again = s.append(batch);
  EXPECT_TRUE(again.ids.empty());
  EXPECT_EQ(again.skipped, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(s.size(), 3u);
  // same formula, other conditions is a new entry; a within-batch repeat is not
  auto hot = mk("MgH2", MaterialClass::Ionic, 7.6, 620.0);
  const auto mixed = s.append({hot, hot, mk("Mg4H8", MaterialClass::Ionic, 7.6, 573.15)});
  EXPECT_EQ(mixed.ids, std::vector<RecordId>{4});
  EXPECT_EQ(mixed.skipped, (std::vector<std::size_t>{1, 2}));
}

TEST(Append, InvalidBatchWritesNothing) {
  TempDir t;
  RecordStore s(t.path());
  auto bad = mk("MgH2", MaterialClass::Ionic, 7.6);
  bad.capacity_wt_pct->canonical_value = 120.0;
  EXPECT_EQ(code_of([&] { s.append({mk("TiFe", MaterialClass::Interstitial, 1.8), bad}); }),
            ErrorCode::ValidationFailure);
  EXPECT_EQ(s.size(), 0u);
  EXPECT_EQ(s.append({mk("TiFe", MaterialClass::Interstitial, 1.8)}).ids, std::vector<RecordId>{1});
}

TEST(Query, HandPicked) {
  TempDir t;
  RecordStore s(t.path());
  s.append(query_fixture());
  QueryFilter f;
  f.elements = {"Mg"};
  f.capacity = Range{4, 8};
  EXPECT_EQ(ids_of(s.query(f)), (std::vector<RecordId>{1, 2}));
  EXPECT_EQ(s.query({}).size(), 6u);
  QueryFilter none;
  none.capacity = Range{8, 8};
  EXPECT_TRUE(s.query(none).empty());

  QueryFilter by_doi;
  by_doi.doi = "10.1/b";
  EXPECT_EQ(ids_of(s.query(by_doi)), (std::vector<RecordId>{3, 4}));
  QueryFilter cls;
  cls.material_class = MaterialClass::Complex;
  cls.elements = {"Mg", "Ni"};
  EXPECT_EQ(ids_of(s.query(cls)), std::vector<RecordId>{4});
  QueryFilter temp;
  temp.temperature = Range{550, 593};
  EXPECT_EQ(ids_of(s.query(temp)), (std::vector<RecordId>{1, 2, 6}));
  QueryFilter formula;
  formula.formula = "Mg4H8";
  EXPECT_EQ(ids_of(s.query(formula)), std::vector<RecordId>{1});
  QueryFilter status;
  status.review_status = ReviewStatus::Accepted;
  EXPECT_TRUE(s.query(status).empty());
  QueryFilter inverted;
  inverted.capacity = Range{5, 4};
  EXPECT_EQ(code_of([&] { s.query(inverted); }), ErrorCode::InvalidArgument);
}

TEST(Query, MeasurementTemperatureFallback) {
  TempDir t;
  RecordStore s(t.path());
  auto r = mk("LaNi5", MaterialClass::Interstitial, 1.4);
  r.measurement_temperature = canonical_quantity(298.15, QuantityKind::Temperature);
  s.append({r});
  QueryFilter f;
  f.temperature = Range{290, 300};
  EXPECT_EQ(s.query(f).size(), 1u);
}

TEST(Histogram, HandCounted) {
  TempDir t;
  RecordStore s(t.path());
  using C = MaterialClass;
  s.append({mk("LaNi5", C::Interstitial, 1.4), mk("Mg2FeH6", C::Complex, 4.0), mk("MgH2", C::Ionic, 7.6),
            mk("LiBH4", C::Complex, 12.0), mk("TiFe", C::Interstitial, std::nullopt)});
  const auto h = s.capacity_histogram({0, 4, 8, 12});
  EXPECT_EQ(h.totals, (std::vector<std::size_t>{1, 2, 0}));
  EXPECT_EQ(h.by_class.at("interstitial"), (std::vector<std::size_t>{1, 0, 0}));
  EXPECT_EQ(h.by_class.at("complex"), (std::vector<std::size_t>{0, 1, 0}));
  EXPECT_EQ(h.by_class.at("ionic"), (std::vector<std::size_t>{0, 1, 0}));
  EXPECT_EQ(h.by_class.at("porous"), (std::vector<std::size_t>{0, 0, 0}));
  EXPECT_EQ(h.out_of_range, 1u);
  EXPECT_EQ(h.absent, 1u);

  const auto low = s.capacity_histogram({20, 30});
  EXPECT_EQ(low.totals, std::vector<std::size_t>{0});
  EXPECT_EQ(low.out_of_range, 4u);

  EXPECT_EQ(code_of([&] { s.capacity_histogram({1}); }), ErrorCode::BadBinEdges);
  EXPECT_EQ(code_of([&] { s.capacity_histogram({0, 4, 4}); }), ErrorCode::BadBinEdges);
  EXPECT_EQ(code_of([&] { s.capacity_histogram({4, 0}); }), ErrorCode::BadBinEdges);
}

TEST(ElementFrequency, HandCounted) {
  TempDir t;
  RecordStore s(t.path());
  using C = MaterialClass;
  s.append({mk("LaNi5", C::Interstitial, 1.4), mk("LaNi4.7Al0.3", C::Interstitial, 1.2),
            mk("TiFe", C::Interstitial, 1.8), mk("Mg2Ni0.5(NiH)0.5", C::Complex, 3.6), mk("MgH2", C::Ionic, 7.6)});
  const auto f = s.element_frequency(0, 4);
  using P = std::pair<std::string, std::size_t>;
  EXPECT_EQ(f, (std::vector<P>{{"Ni", 3}, {"La", 2}, {"Al", 1}, {"Fe", 1}, {"Mg", 1}, {"Ti", 1}}));
  EXPECT_EQ(s.element_frequency(4, 8), (std::vector<P>{{"Mg", 1}}));
  EXPECT_TRUE(s.element_frequency(20, 30).empty());
  EXPECT_EQ(code_of([&] { s.element_frequency(4, 4); }), ErrorCode::InvalidArgument);
}

TEST(Dopants, HandCounted) {
  TempDir t;
  RecordStore s(t.path());
  using C = MaterialClass;
  s.append({mk("LaNi4Mg", C::Interstitial, 1.5), mk("La0.8Mg0.2Ni5", C::Interstitial, 1.6, 320.0),
            mk("LaNi4.5Mg0.5", C::Interstitial, 1.55), mk("LaNi4Co", C::Interstitial, 1.3),
            mk("LaNi4.7Al0.3", C::Interstitial, 1.2), mk("MgH2Ni0.05", C::Ionic, 6.9, 560.0),
            mk("MgH2Ni0.1", C::Ionic, 6.5, 540.0), mk("MgH2Fe0.1", C::Ionic, 6.8)});
  const auto la = s.dopant_analysis("LaNi5", 5);
  ASSERT_EQ(la.size(), 3u);
  EXPECT_EQ(la[0].element, "Mg");
  EXPECT_EQ(la[0].count, 3u);
  EXPECT_EQ(la[0].capacities, (std::vector<double>{1.5, 1.6, 1.55}));
  EXPECT_EQ(la[0].desorption_temperatures, std::vector<double>{320.0});
  EXPECT_EQ(la[1].element, "Al");
  EXPECT_EQ(la[2].element, "Co");

  const auto mg = s.dopant_analysis("MgH2", 2);
  ASSERT_EQ(mg.size(), 2u);
  EXPECT_EQ(mg[0].element, "Ni");
  EXPECT_EQ(mg[0].count, 5u);
  EXPECT_EQ(mg[1].element, "La");
  EXPECT_EQ(mg[1].count, 3u);

  EXPECT_TRUE(s.dopant_analysis("ZrMn2", 5).empty());
  EXPECT_EQ(code_of([&] { s.dopant_analysis("LaNi5", 0); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([&] { s.dopant_analysis("Xq2", 5); }), ErrorCode::UnknownElement);
}

TEST(Review, AcceptCorrectReject) {
  TempDir t;
  RecordStore s(t.path());
  s.append({mk("MgH2", MaterialClass::Ionic, 7.0, 573.15), mk("LaNi5", MaterialClass::Interstitial, 1.4)});

  const auto acc = s.set_review(2, {ReviewActionKind::Accept, std::nullopt}, "ann", 1700000100);
  EXPECT_EQ(acc.record.review_status, ReviewStatus::Accepted);
  EXPECT_EQ(acc.version, 2);
  EXPECT_EQ(s.audit(2).size(), 1u);
  EXPECT_EQ(code_of([&] { s.set_review(2, {ReviewActionKind::Accept, std::nullopt}, "bob"); }), ErrorCode::Conflict);

  auto raw = to_json(s.get(1).record);
  raw["capacity_wt_pct"] = "7.6 wt%";
  const auto fixed = s.set_review(1, {ReviewActionKind::Correct, raw}, "ann", 1700000200);
  EXPECT_EQ(fixed.record.capacity_wt_pct->canonical_value, 7.6);
  EXPECT_EQ(fixed.record.review_status, ReviewStatus::Corrected);
  EXPECT_EQ(fixed.record.provenance, s.get(1).record.provenance);
  const auto trail = s.audit(1);
  ASSERT_EQ(trail.size(), 1u);
  EXPECT_EQ(trail[0].prior.at("capacity_wt_pct"), 7.0);
  EXPECT_EQ(trail[0].reviewer, "ann");
  EXPECT_EQ(trail[0].timestamp, 1700000200);
  EXPECT_EQ(trail[0].action, "correct");

  const auto before = s.all();
  raw["capacity_wt_pct"] = "120 wt%";
  EXPECT_EQ(code_of([&] { s.set_review(1, {ReviewActionKind::Correct, raw}, "ann"); }), ErrorCode::ValidationFailure);
  EXPECT_EQ(s.all(), before);
  EXPECT_EQ(s.audit().size(), 2u);

  const auto rej = s.set_review(1, {ReviewActionKind::Reject, std::nullopt}, "bob");
  EXPECT_EQ(rej.record.review_status, ReviewStatus::Rejected);
  EXPECT_EQ(rej.version, 3);
  EXPECT_EQ(code_of([&] { s.set_review(1, {ReviewActionKind::Reject, std::nullopt}, "bob"); }), ErrorCode::Conflict);
  EXPECT_EQ(code_of([&] { s.set_review(9, {ReviewActionKind::Accept, std::nullopt}, "bob"); }), ErrorCode::UnknownId);
  EXPECT_EQ(code_of([&] { s.get(9); }), ErrorCode::UnknownId);
}

TEST(Review, QueueOldestFirst) {
  TempDir t;
  RecordStore s(t.path());
  s.append(query_fixture());
  s.set_review(2, {ReviewActionKind::Reject, std::nullopt}, "r");
  EXPECT_EQ(ids_of(s.review_queue()), (std::vector<RecordId>{1, 3, 4, 5, 6}));
}

TEST(Store, ReloadInvariance) {
  TempDir t;
  const auto records = synthetic_store_records(300, 11);
  std::vector<StoredRecord> snapshot;
  std::vector<AuditEntry> audit;
  {
    RecordStore s(t.path());
    for (std::size_t i = 0; i < records.size(); i += 50) {
      s.append(std::vector<MaterialRecord>(records.begin() + i, records.begin() + i + 50));
    }
    s.set_review(3, {ReviewActionKind::Accept, std::nullopt}, "a", 1);
    s.set_review(5, {ReviewActionKind::Reject, std::nullopt}, "b", 2);
    auto raw = to_json(s.get(7).record);
    raw["notes"] = "checked";
    s.set_review(7, {ReviewActionKind::Correct, raw}, "c", 3);
    s.add_manifest({{"doi", "10.5555/s1"}, {"descriptive_blocks", {{{"figure_id", "fig1"}, {"text", "d"}}}}});
    snapshot = s.all();
    audit = s.audit();
  }
  RecordStore again(t.path());
  EXPECT_EQ(again.all(), snapshot);
  EXPECT_EQ(again.audit(), audit);
  EXPECT_EQ(again.descriptive_context("10.5555/s1", "fig1").size(), 1u);
  EXPECT_TRUE(again.descriptive_context("10.5555/s1", "fig2").empty());
  QueryFilter f;
  f.elements = {"Ni"};
  f.capacity = Range{0, 6};
  RecordStore third(t.path());
  EXPECT_EQ(third.query(f), again.query(f));
  // ids keep counting after a reload
  EXPECT_EQ(again.append({mk("Pd", MaterialClass::Other, 0.6)}).ids, std::vector<RecordId>{301});
}

TEST(Store, OracleEquivalence) {
  TempDir t;
  RecordStore s(t.path());
  const auto records = synthetic_store_records(1000, 2024);
  s.append(records);
  ASSERT_GT(s.size(), 990u);
  const auto all = s.all();
  for (const auto& edges : std::vector<std::vector<double>>{{0, 4, 8, 12}, {0.5, 1, 2, 3, 5, 8, 13}, {-1, 100}}) {
    EXPECT_EQ(s.capacity_histogram(edges), naive_histogram(all, edges));
    const auto h = s.capacity_histogram(edges);
    std::size_t sum = h.out_of_range + h.absent;
    for (auto c : h.totals) sum += c;
    EXPECT_EQ(sum, all.size());
  }
  for (auto [lo, hi] : std::vector<std::pair<double, double>>{{0, 4}, {4, 8}, {8, 12}, {0, 100}}) {
    EXPECT_EQ(s.element_frequency(lo, hi), naive_element_frequency(all, lo, hi));
  }
  for (const std::string base : {"LaNi5", "MgH2", "Mg2Fe", "TiFe", "Ni"}) {
    EXPECT_EQ(s.dopant_analysis(base, 5), naive_dopants(all, base, 5)) << base;
  }
  EXPECT_FALSE(s.dopant_analysis("LaNi5", 5).empty());
}

TEST(Store, FaultInjectionLeavesStoreUnchanged) {
  TempDir t;
  {
    RecordStore s(t.path());
    s.append(query_fixture());
    const auto before_files = segment_snapshot(t.path());
    const auto before = s.all();
    s.set_fault_hook([](std::string_view) { throw std::runtime_error("crash"); });
    EXPECT_THROW(s.append({mk("TiFe", MaterialClass::Interstitial, 1.8)}), std::runtime_error);
    EXPECT_THROW(s.set_review(1, {ReviewActionKind::Accept, std::nullopt}, "x"), std::runtime_error);
    EXPECT_EQ(s.all(), before);
    EXPECT_TRUE(s.audit().empty());
    EXPECT_EQ(segment_snapshot(t.path()), before_files);
    s.set_fault_hook(nullptr);
    EXPECT_EQ(s.append({mk("TiFe", MaterialClass::Interstitial, 1.8)}).ids, std::vector<RecordId>{7});
  }
  EXPECT_EQ(RecordStore(t.path()).size(), 7u);
}

TEST(Store, LeftoverTempSegmentIgnored) {
  TempDir t;
  {
    RecordStore s(t.path());
    s.append(query_fixture());
  }
  std::ofstream(t / "segments/000002.jsonl.tmp") << "{\"half\":";
  RecordStore s(t.path());
  EXPECT_EQ(s.size(), 6u);
  EXPECT_FALSE(fs::exists(t / "segments/000002.jsonl.tmp"));
}

TEST(Store, OpenFailure) {
  TempDir t;
  std::ofstream(t / "file") << "x";
  EXPECT_EQ(code_of([&] { RecordStore s(t / "file"); }), ErrorCode::StoreOpenFailure);
  fs::create_directories(t / "bad/segments");
  std::ofstream(t / "bad/segments/000001.jsonl") << "not json\n";
  EXPECT_EQ(code_of([&] { RecordStore s(t / "bad"); }), ErrorCode::StoreOpenFailure);
}

TEST(Store, ReadersSeeWholeBatches) {
  TempDir t;
  RecordStore s(t.path());
  const auto records = synthetic_store_records(400, 3);
  std::atomic<bool> done{false};
  std::atomic<int> torn{0};
  std::vector<std::thread> readers;
  for (int k = 0; k < 3; ++k) {
    readers.emplace_back([&] {
      while (!done) {
        const auto n = s.all().size();
        if (n % 40 != 0) ++torn;
        QueryFilter f;
        f.capacity = Range{0, 12};
        s.query(f);
      }
    });
  }
  for (std::size_t i = 0; i < records.size(); i += 40) {
    s.append(std::vector<MaterialRecord>(records.begin() + i, records.begin() + i + 40));
  }
  done = true;
  for (auto& r : readers) r.join();
  EXPECT_EQ(torn.load(), 0);
}

TEST(Export, MergedJsonl) {
  TempDir t;
  RecordStore s(t.path());
  s.append(query_fixture());
  s.set_review(1, {ReviewActionKind::Accept, std::nullopt}, "r", 5);
  std::istringstream in(export_jsonl(s));
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 6u);
  auto first = json::parse(lines[0]);
  EXPECT_EQ(first.at("id"), 1);
  EXPECT_EQ(first.at("version"), 2);
  EXPECT_EQ(first.at("review_status"), "accepted");
  first.erase("id");
  first.erase("version");
  EXPECT_EQ(record_from_json(first), s.get(1).record);
}
