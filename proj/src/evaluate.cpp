#include "dive/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "dive/assignment.hpp"
#include "dive/error.hpp"
#include "dive/util.hpp"

namespace dive {

using nlohmann::json;

std::string match_key(const MaterialRecord& r) {
  std::string key = r.formula_raw;
  auto part = [&key](std::string_view s) {
    if (!key.empty()) key += " | ";
    key += s;
  };
  if (r.material_class != MaterialClass::Other) part(to_string(r.material_class));
  const auto& t = r.measurement_temperature ? r.measurement_temperature : r.desorption_temperature;
  if (t) part("T=" + format_shortest(round_sig(t->canonical_value, 3)));
  const auto& p = r.absorption_pressure ? r.absorption_pressure : r.desorption_pressure;
  if (p) part("P=" + format_shortest(round_sig(p->canonical_value, 3)));
  return key;
}

double stable_sum(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

std::vector<std::vector<double>> similarity_matrix(const std::vector<MaterialRecord>& gold,
                                                   const std::vector<MaterialRecord>& pred, const Embedder& embedder) {
  std::map<std::string, std::vector<float>, std::less<>> cache;
  auto vec = [&](const MaterialRecord& r) -> const std::vector<float>& {
    auto key = match_key(r);
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(key, embedder.embed(key)).first;
    return it->second;
  };
  std::vector<std::vector<double>> sim(gold.size(), std::vector<double>(pred.size(), 0.0));
  for (std::size_t i = 0; i < gold.size(); ++i) {
    for (std::size_t j = 0; j < pred.size(); ++j) sim[i][j] = cosine(vec(gold[i]), vec(pred[j]));
  }
  return sim;
}

namespace {

MatchResult finish(const std::vector<int>& assigned, const std::vector<std::vector<double>>& sim, std::size_t n_pred,
                   const ScoreParams& params) {
  MatchResult m;
  std::vector<double> sims;
  std::vector<char> pred_used(n_pred, 0);
  for (std::size_t i = 0; i < assigned.size(); ++i) {
    if (assigned[i] < 0) continue;
    const auto j = static_cast<std::size_t>(assigned[i]);
    sims.push_back(sim[i][j]);
    if (sim[i][j] >= params.theta) {
      m.pairs.push_back({i, j, sim[i][j]});
      pred_used[j] = 1;
    }
  }
  m.assignment_total = stable_sum(std::move(sims));
  std::vector<char> gold_used(assigned.size(), 0);
  for (const auto& p : m.pairs) gold_used[p.gold] = 1;
  for (std::size_t i = 0; i < gold_used.size(); ++i) {
    if (!gold_used[i]) m.unmatched_gold.push_back(i);
  }
  for (std::size_t j = 0; j < n_pred; ++j) {
    if (!pred_used[j]) m.unmatched_pred.push_back(j);
  }
  return m;
}

}  // namespace

MatchResult match_similarity(const std::vector<std::vector<double>>& sim, const ScoreParams& params) {
  const std::size_t n_pred = sim.empty() ? 0 : sim[0].size();
  return finish(max_weight_assignment(sim), sim, n_pred, params);
}

MatchResult match_entries(const std::vector<MaterialRecord>& gold, const std::vector<MaterialRecord>& pred,
                          const Embedder& embedder, const ScoreParams& params) {
  const auto sim = similarity_matrix(gold, pred, embedder);
  auto assigned = max_weight_assignment(sim);

  // blocks of interchangeable pairs: same gold key and same pred key
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> blocks;
  for (std::size_t i = 0; i < assigned.size(); ++i) {
    if (assigned[i] >= 0) blocks[{match_key(gold[i]), match_key(pred[assigned[i]])}].push_back(i);
  }
  for (const auto& [_, rows] : blocks) {
    if (rows.size() < 2) continue;
    std::vector<int> cols;
    for (auto i : rows) cols.push_back(assigned[i]);
    std::vector<std::vector<double>> score(rows.size(), std::vector<double>(cols.size()));
    for (std::size_t a = 0; a < rows.size(); ++a) {
      for (std::size_t b = 0; b < cols.size(); ++b) {
        score[a][b] = score_pair(gold[rows[a]], pred[cols[b]], params).entry_score;
      }
    }
    auto local = max_weight_assignment(score);
    for (std::size_t a = 0; a < rows.size(); ++a) assigned[rows[a]] = cols[local[a]];
  }
  return finish(assigned, sim, pred.size(), params);
}

namespace {

double numeric_score(double a, double g, double eps) {
  if (std::abs(g) < eps) return std::abs(a) <= eps ? 1.0 : 0.0;
  return std::max(0.0, 1.0 - std::abs(a - g) / std::max(std::abs(g), eps));
}

}  // namespace

PairScore score_pair(const MaterialRecord& gold, const MaterialRecord& pred, const ScoreParams& params) {
  PairScore out;
  if (gold.composition) {
    const bool same = pred.composition && canonical_formula(*gold.composition) == canonical_formula(*pred.composition);
    out.fields.push_back({"formula", same ? 1.0 : 0.0});
  } else {
    out.fields.push_back({"formula", gold.formula_raw == pred.formula_raw ? 1.0 : 0.0});
  }
  if (gold.material_class != MaterialClass::Other) {
    out.fields.push_back({"material_class", gold.material_class == pred.material_class ? 1.0 : 0.0});
  }
  if (gold.interstitial_subtype) {
    out.fields.push_back({"interstitial_subtype", gold.interstitial_subtype == pred.interstitial_subtype ? 1.0 : 0.0});
  }
  for (auto f : kQuantityFields) {
    const auto& g = gold.field(f);
    if (!g) continue;
    const auto& a = pred.field(f);
    out.fields.push_back(
        {std::string(json_key(f)), a ? numeric_score(a->canonical_value, g->canonical_value, params.epsilon) : 0.0});
  }
  double sum = 0.0;
  for (const auto& fs : out.fields) sum += fs.score;
  out.entry_score = sum / static_cast<double>(out.fields.size());
  return out;
}

ScoreReport score_extraction(const std::vector<MaterialRecord>& gold, const std::vector<MaterialRecord>& pred,
                             const Embedder& embedder, const ScoreParams& params) {
  ScoreReport r;
  r.params = params;
  r.embedder = embedder.tag();
  r.gold_count = gold.size();
  r.pred_count = pred.size();
  if (gold.empty() && pred.empty()) {
    r.accuracy = r.completeness = 50.0;
    r.total = 100.0;
    return r;
  }
  auto m = match_entries(gold, pred, embedder, params);
  std::vector<double> scores;
  for (const auto& p : m.pairs) {
    auto ps = score_pair(gold[p.gold], pred[p.pred], params);
    ps.pair = p;
    scores.push_back(ps.entry_score);
    r.per_pair.push_back(std::move(ps));
  }
  const double s = stable_sum(std::move(scores));
  r.accuracy = pred.empty() ? 0.0 : 50.0 * s / static_cast<double>(pred.size());
  r.completeness = gold.empty() ? 0.0 : 50.0 * s / static_cast<double>(gold.size());
  r.total = r.accuracy + r.completeness;
  r.unmatched_gold = std::move(m.unmatched_gold);
  r.unmatched_pred = std::move(m.unmatched_pred);
  return r;
}

Distribution summarize(std::vector<double> v) {
  if (v.empty()) throw Error(ErrorCode::InvalidArgument, "cannot summarize an empty list");
  std::sort(v.begin(), v.end());
  auto q = [&v](double p) {
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (v[hi] - v[lo]) * (pos - static_cast<double>(lo));
  };
  return {v.front(), q(0.25), q(0.5), q(0.75), v.back()};
}

CorpusReport score_corpus(const std::vector<PaperPair>& papers, const Embedder& embedder, const ScoreParams& params) {
  if (papers.empty()) throw Error(ErrorCode::InvalidArgument, "corpus scoring needs at least one paper");
  CorpusReport c;
  std::vector<double> totals;
  double acc = 0, comp = 0;
  for (const auto& p : papers) {
    c.paper_ids.push_back(p.id);
    c.per_paper.push_back(score_extraction(p.gold, p.pred, embedder, params));
    acc += c.per_paper.back().accuracy;
    comp += c.per_paper.back().completeness;
    totals.push_back(c.per_paper.back().total);
  }
  const auto n = static_cast<double>(papers.size());
  c.mean_accuracy = acc / n;
  c.mean_completeness = comp / n;
  double tot = 0;
  for (double t : totals) tot += t;
  c.mean_total = tot / n;
  c.total_distribution = summarize(totals);
  return c;
}

std::vector<PaperPair> pair_by_doi(const std::vector<MaterialRecord>& gold, const std::vector<MaterialRecord>& pred) {
  std::map<std::string, PaperPair> by;
  for (const auto& r : gold) {
    auto& p = by[r.provenance.doi];
    p.id = r.provenance.doi;
    p.gold.push_back(r);
  }
  for (const auto& r : pred) {
    auto& p = by[r.provenance.doi];
    p.id = r.provenance.doi;
    p.pred.push_back(r);
  }
  std::vector<PaperPair> out;
  for (auto& [_, p] : by) out.push_back(std::move(p));
  return out;
}

json to_json(const ScoreReport& r) {
  json pairs = json::array();
  for (const auto& p : r.per_pair) {
    json fields = json::object();
    for (const auto& f : p.fields) fields[f.field] = f.score;
    pairs.push_back({{"gold", p.pair.gold},
                     {"pred", p.pair.pred},
                     {"similarity", p.pair.similarity},
                     {"entry_score", p.entry_score},
                     {"fields", fields}});
  }
  return json{{"accuracy", r.accuracy},
              {"completeness", r.completeness},
              {"total", r.total},
              {"gold_count", r.gold_count},
              {"pred_count", r.pred_count},
              {"params",
               {{"epsilon", r.params.epsilon},
                {"theta", r.params.theta},
                {"field_score", "clipped_relative_error"},
                {"accuracy_denominator", "pred"},
                {"completeness_denominator", "gold"},
                {"matching", "optimal_assignment"},
                {"embedder", r.embedder}}},
              {"pairs", pairs},
              {"unmatched_gold", r.unmatched_gold},
              {"unmatched_pred", r.unmatched_pred}};
}

json to_json(const CorpusReport& r) {
  json per = json::array();
  for (std::size_t i = 0; i < r.per_paper.size(); ++i) {
    auto j = to_json(r.per_paper[i]);
    j["paper"] = r.paper_ids[i];
    per.push_back(std::move(j));
  }
  const auto& d = r.total_distribution;
  return json{{"accuracy", r.mean_accuracy},
              {"completeness", r.mean_completeness},
              {"total", r.mean_total},
              {"per_paper", per},
              {"summary",
               {{"papers", r.per_paper.size()},
                {"aggregation", "unweighted_mean"},
                {"total_min", d.min},
                {"total_q1", d.q1},
                {"total_median", d.median},
                {"total_q3", d.q3},
                {"total_max", d.max}}}};
}

}  // namespace dive
