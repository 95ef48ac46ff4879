#pragma once

#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dive/gateway.hpp"
#include "dive/record.hpp"

namespace dive {

struct ScoreParams {
  double epsilon = 1e-6;  // relative-error floor on |gold|
  double theta = 0.5;     // minimum similarity for a kept match
};

struct MatchPair {
  std::size_t gold = 0;
  std::size_t pred = 0;
  double similarity = 0.0;
};

struct MatchResult {
  std::vector<MatchPair> pairs;  // ordered by gold index
  std::vector<std::size_t> unmatched_gold;
  std::vector<std::size_t> unmatched_pred;
  /// Similarity summed over the full assignment, before the threshold drop.
  double assignment_total = 0.0;
};

struct FieldScore {
  std::string field;
  double score = 0.0;
};

struct PairScore {
  MatchPair pair;
  double entry_score = 0.0;
  std::vector<FieldScore> fields;
};

struct ScoreReport {
  double accuracy = 0.0;
  double completeness = 0.0;
  double total = 0.0;
  std::vector<PairScore> per_pair;
  std::vector<std::size_t> unmatched_gold;
  std::vector<std::size_t> unmatched_pred;
  std::size_t gold_count = 0;
  std::size_t pred_count = 0;
  ScoreParams params;
  std::string embedder;
};

/// "formula_raw | material_class | T=<K> | P=<bar>" with absent parts left out.
/// Class `other` counts as absent. T is the measurement temperature, else the
/// desorption temperature; P is the absorption pressure, else the desorption
/// pressure; both rounded to 3 significant digits.
std::string match_key(const MaterialRecord& r);

/// Sum of values in ascending order, so equal multisets give equal sums.
double stable_sum(std::vector<double> values);

std::vector<std::vector<double>> similarity_matrix(const std::vector<MaterialRecord>& gold,
                                                   const std::vector<MaterialRecord>& pred, const Embedder& embedder);

/// Optimal assignment on a given similarity matrix, then the threshold drop.
MatchResult match_similarity(const std::vector<std::vector<double>>& sim, const ScoreParams& params = {});

/// match_similarity over embedded match keys. Pairs whose gold and pred keys
/// coincide are interchangeable for similarity; within each such block the
/// pairing is re-solved to maximize entry score.
MatchResult match_entries(const std::vector<MaterialRecord>& gold, const std::vector<MaterialRecord>& pred,
                          const Embedder& embedder, const ScoreParams& params = {});

/// Mean of field scores over the scorable fields present in gold.
PairScore score_pair(const MaterialRecord& gold, const MaterialRecord& pred, const ScoreParams& params = {});

ScoreReport score_extraction(const std::vector<MaterialRecord>& gold, const std::vector<MaterialRecord>& pred,
                             const Embedder& embedder, const ScoreParams& params = {});

struct Distribution {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

/// Quartiles by linear interpolation between order statistics.
Distribution summarize(std::vector<double> values);

struct CorpusReport {
  std::vector<std::string> paper_ids;
  std::vector<ScoreReport> per_paper;
  double mean_accuracy = 0.0;
  double mean_completeness = 0.0;
  double mean_total = 0.0;
  Distribution total_distribution;
};

struct PaperPair {
  std::string id;
  std::vector<MaterialRecord> gold;
  std::vector<MaterialRecord> pred;
};

CorpusReport score_corpus(const std::vector<PaperPair>& papers, const Embedder& embedder,
                          const ScoreParams& params = {});

/// Groups records by provenance.doi on both sides (doi order).
std::vector<PaperPair> pair_by_doi(const std::vector<MaterialRecord>& gold, const std::vector<MaterialRecord>& pred);

nlohmann::json to_json(const ScoreReport& r);
nlohmann::json to_json(const CorpusReport& r);

}  // namespace dive
