#include "dive/predictor.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "dive/error.hpp"
#include "dive/featurize.hpp"
#include "dive/quantity.hpp"
#include "dive/record.hpp"
#include "dive/util.hpp"

namespace dive {

using nlohmann::json;

SeededRng::SeededRng(std::uint64_t seed) : engine_(seed) {}

std::uint64_t SeededRng::next() { return engine_(); }

double SeededRng::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

std::size_t SeededRng::below(std::size_t bound) {
  if (bound == 0) throw Error(ErrorCode::InvalidArgument, "below(0)");
  const std::uint64_t b = bound;
  const std::uint64_t threshold = (0 - b) % b;
  while (true) {
    const auto r = next();
    if (r >= threshold) return static_cast<std::size_t>(r % b);
  }
}

double SeededRng::normal(double mean, double sigma) {
  if (spare_) {
    const double z = *spare_;
    spare_.reset();
    return mean + sigma * z;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(a);
  return mean + sigma * r * std::cos(a);
}

// ---------------------------------------------------------------------------

Dataset load_dataset(const std::filesystem::path& path, const std::string& target_field) {
  std::optional<QuantityKind> kind;
  for (auto f : kQuantityFields) {
    if (json_key(f) == target_field) kind = kind_of(f);
  }
  Dataset d;
  for (const auto& row : read_jsonl(path)) {
    auto formula = row.find("formula");
    auto target = row.find(target_field);
    if (formula == row.end() || !formula->is_string() || target == row.end() || target->is_null()) {
      ++d.skipped;
      continue;
    }
    try {
      auto c = parse_formula(formula->get<std::string>());
      double y;
      if (target->is_number()) {
        y = target->get<double>();
      } else if (target->is_string() && kind) {
        y = parse_quantity(target->get<std::string>(), *kind).canonical_value;
      } else {
        ++d.skipped;
        continue;
      }
      if (!std::isfinite(y)) {
        ++d.skipped;
        continue;
      }
      d.formulas.push_back(formula->get<std::string>());
      d.compositions.push_back(std::move(c));
      d.targets.push_back(y);
    } catch (const Error& e) {
      spdlog::debug("skipping dataset row: {}", e.what());
      ++d.skipped;
    }
  }
  return d;
}

ModelMetrics regression_metrics(const std::vector<double>& predicted, const std::vector<double>& target) {
  if (predicted.size() != target.size() || target.empty()) {
    throw Error(ErrorCode::InvalidArgument, "metrics need equal, non-empty prediction and target lists");
  }
  const auto n = static_cast<double>(target.size());
  double mean = 0.0;
  for (double t : target) mean += t;
  mean /= n;
  double ss_tot = 0.0, ss_res = 0.0, abs_err = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double e = target[i] - predicted[i];
    ss_res += e * e;
    abs_err += std::abs(e);
    ss_tot += (target[i] - mean) * (target[i] - mean);
  }
  if (ss_tot == 0.0) throw Error(ErrorCode::DegenerateTarget, "target has zero variance; R^2 is undefined");
  ModelMetrics m;
  m.r2 = 1.0 - ss_res / ss_tot;
  m.mae = abs_err / n;
  m.rmse = std::sqrt(ss_res / n);
  return m;
}

// ---------------------------------------------------------------------------

PredictorModel::PredictorModel(TreeEnsemble ensemble, std::string schema_hash, TrainingMeta meta, ModelMetrics metrics)
    : ensemble_(std::move(ensemble)), schema_hash_(std::move(schema_hash)), meta_(std::move(meta)), metrics_(metrics) {}

void PredictorModel::check_schema() const {
  const auto& current = FeatureSchema::current().hash();
  if (schema_hash_ != current) {
    throw Error(ErrorCode::SchemaMismatch, "model was trained on a different feature schema",
                {{"model", schema_hash_}, {"current", current}});
  }
}

double PredictorModel::predict(const Composition& c) const {
  check_schema();
  const double y = ensemble_.predict(featurize(c));
  if (!std::isfinite(y)) throw Error(ErrorCode::ModelUnavailable, "model produced a non-finite prediction");
  return y;
}

namespace {

json grid_point_json(const GridPoint& g) {
  return json{{"n_trees", g.n_trees}, {"max_depth", g.max_depth}, {"learning_rate", g.learning_rate},
              {"cv_mse", g.cv_mse}};
}

GridPoint grid_point_from(const json& j) {
  return {j.at("n_trees").get<int>(), j.at("max_depth").get<int>(), j.at("learning_rate").get<double>(),
          j.at("cv_mse").get<double>()};
}

}  // namespace

json PredictorModel::to_json() const {
  json trees = json::array();
  for (const auto& t : ensemble_.trees) trees.push_back(dive::to_json(t));
  json grid = json::array();
  for (const auto& g : meta_.grid) grid.push_back(grid_point_json(g));
  return json{{"format", "dive-gbdt"},
              {"version", 1},
              {"schema_hash", schema_hash_},
              {"n_features", FeatureSchema::current().size()},
              {"base_score", ensemble_.base_score},
              {"learning_rate", ensemble_.learning_rate},
              {"training_meta",
               {{"seed", meta_.seed},
                {"chosen", grid_point_json(meta_.chosen)},
                {"grid", grid},
                {"skipped_rows", meta_.skipped_rows}}},
              {"metrics",
               {{"r2", metrics_.r2},
                {"mae", metrics_.mae},
                {"rmse", metrics_.rmse},
                {"n_train", metrics_.n_train},
                {"n_test", metrics_.n_test}}},
              {"trees", trees}};
}

PredictorModel PredictorModel::from_json(const json& j) {
  try {
    if (j.at("format") != "dive-gbdt" || j.at("version") != 1) {
      throw Error(ErrorCode::SchemaMismatch, "not a version 1 dive-gbdt model file");
    }
    PredictorModel m;
    m.schema_hash_ = j.at("schema_hash").get<std::string>();
    m.ensemble_.base_score = j.at("base_score").get<double>();
    m.ensemble_.learning_rate = j.at("learning_rate").get<double>();
    const auto n_features = j.at("n_features").get<std::size_t>();
    for (const auto& t : j.at("trees")) {
      auto tree = tree_from_json(t);
      for (int f : tree.feature) {
        if (f >= 0 && static_cast<std::size_t>(f) >= n_features) {
          throw Error(ErrorCode::SchemaMismatch, "split feature index beyond the schema");
        }
      }
      m.ensemble_.trees.push_back(std::move(tree));
    }
    const auto& meta = j.at("training_meta");
    m.meta_.seed = meta.at("seed").get<std::uint64_t>();
    m.meta_.chosen = grid_point_from(meta.at("chosen"));
    for (const auto& g : meta.at("grid")) m.meta_.grid.push_back(grid_point_from(g));
    m.meta_.skipped_rows = meta.at("skipped_rows").get<std::size_t>();
    const auto& mt = j.at("metrics");
    m.metrics_ = {mt.at("r2").get<double>(), mt.at("mae").get<double>(), mt.at("rmse").get<double>(),
                  mt.at("n_train").get<std::size_t>(), mt.at("n_test").get<std::size_t>()};
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ModelUnavailable, std::string("malformed model file: ") + e.what());
  }
}

std::string PredictorModel::digest() const { return sha256_hex(to_json().dump() + "\n"); }

std::string PredictorModel::save(const std::filesystem::path& path) const {
  const auto text = to_json().dump() + "\n";
  write_file_atomic(path, text);
  return sha256_hex(text);
}

PredictorModel PredictorModel::load(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const Error& e) {
    throw Error(ErrorCode::ModelUnavailable, e.what(), {{"path", path.string()}});
  }
  auto j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::ModelUnavailable, "model file is not JSON", {{"path", path.string()}});
  return from_json(j);
}

// ---------------------------------------------------------------------------

namespace {

TrainMatrix columns_of(const std::vector<std::vector<double>>& rows, const std::vector<std::size_t>& idx) {
  TrainMatrix m;
  const auto nf = rows.empty() ? 0 : rows[0].size();
  m.columns.assign(nf, std::vector<double>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    for (std::size_t f = 0; f < nf; ++f) m.columns[f][k] = rows[idx[k]][f];
  }
  return m;
}

}  // namespace

TrainResult train(const Dataset& data, const TrainConfig& config) {
  if (config.tree_counts.empty() || config.depths.empty() || config.learning_rates.empty() || config.folds < 2) {
    throw Error(ErrorCode::InvalidArgument, "empty hyperparameter grid or fewer than 2 folds");
  }
  std::vector<std::vector<double>> features;
  std::vector<double> targets;
  std::size_t skipped = data.skipped;
  for (std::size_t i = 0; i < data.compositions.size(); ++i) {
    try {
      features.push_back(featurize(data.compositions[i]));
      targets.push_back(data.targets[i]);
    } catch (const Error& e) {
      spdlog::info("skipping {}: {}", i < data.formulas.size() ? data.formulas[i] : format_formula(data.compositions[i]),
                   e.what());
      ++skipped;
    }
  }
  const std::size_t n = targets.size();
  if (n < 25) {
    throw Error(ErrorCode::DatasetTooSmall, fmt::format("{} usable rows; at least 25 are needed", n), {{"rows", n}});
  }
  {
    bool constant = true;
    for (double t : targets) constant = constant && t == targets[0];
    if (constant) throw Error(ErrorCode::DegenerateTarget, "target is constant; R^2 is undefined");
  }

  SeededRng rng(config.seed);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  const auto n_test = static_cast<std::size_t>(std::ceil(config.test_fraction * static_cast<double>(n)));
  std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());

  // contiguous folds over the training split, larger folds first
  const auto m = train_idx.size();
  const auto k = static_cast<std::size_t>(config.folds);
  std::vector<std::pair<std::size_t, std::size_t>> folds;
  for (std::size_t f = 0, start = 0; f < k; ++f) {
    const auto size = m / k + (f < m % k ? 1 : 0);
    folds.emplace_back(start, start + size);
    start += size;
  }

  const int max_trees = *std::max_element(config.tree_counts.begin(), config.tree_counts.end());
  // mse_sum[depth][rate][tree count]
  std::map<std::tuple<int, double, int>, double> mse_sum;
  for (int depth : config.depths) {
    for (double rate : config.learning_rates) {
      for (const auto& [lo, hi] : folds) {
        std::vector<std::size_t> fit_idx, val_idx;
        for (std::size_t i = 0; i < m; ++i) (i >= lo && i < hi ? val_idx : fit_idx).push_back(train_idx[i]);
        std::vector<double> y_fit;
        for (auto i : fit_idx) y_fit.push_back(targets[i]);
        std::vector<double> val_sum(val_idx.size(), 0.0);
        double base = 0.0;
        for (double v : y_fit) base += v;
        base /= static_cast<double>(y_fit.size());
        GbdtParams p{max_trees, depth, rate};
        fit_gbdt(columns_of(features, fit_idx), y_fit, p, [&](std::size_t t, const RegressionTree& tree) {
          for (std::size_t v = 0; v < val_idx.size(); ++v) val_sum[v] += tree.predict(features[val_idx[v]]);
          const int count = static_cast<int>(t + 1);
          if (std::find(config.tree_counts.begin(), config.tree_counts.end(), count) == config.tree_counts.end()) return;
          double se = 0.0;
          for (std::size_t v = 0; v < val_idx.size(); ++v) {
            const double e = targets[val_idx[v]] - (base + rate * val_sum[v]);
            se += e * e;
          }
          mse_sum[{depth, rate, count}] += se / static_cast<double>(val_idx.size());
        });
      }
    }
  }

  TrainingMeta meta;
  meta.seed = config.seed;
  meta.skipped_rows = skipped;
  for (int trees : config.tree_counts) {
    for (int depth : config.depths) {
      for (double rate : config.learning_rates) {
        GridPoint g{trees, depth, rate, mse_sum[{depth, rate, trees}] / static_cast<double>(k)};
        if (meta.grid.empty() || g.cv_mse < meta.chosen.cv_mse) meta.chosen = g;
        meta.grid.push_back(g);
      }
    }
  }

  std::vector<double> y_train;
  for (auto i : train_idx) y_train.push_back(targets[i]);
  auto ensemble = fit_gbdt(columns_of(features, train_idx), y_train,
                           GbdtParams{meta.chosen.n_trees, meta.chosen.max_depth, meta.chosen.learning_rate});

  std::vector<double> pred, truth;
  for (auto i : test) {
    pred.push_back(ensemble.predict(features[i]));
    truth.push_back(targets[i]);
  }
  auto metrics = regression_metrics(pred, truth);
  metrics.n_train = train_idx.size();
  metrics.n_test = test.size();
  PredictorModel model(std::move(ensemble), FeatureSchema::current().hash(), std::move(meta), metrics);
  return {std::move(model), metrics};
}

ModelMetrics evaluate_model(const PredictorModel& model, const std::vector<Composition>& compositions,
                            const std::vector<double>& targets) {
  if (compositions.empty()) throw Error(ErrorCode::InvalidArgument, "empty holdout");
  std::vector<double> pred;
  for (const auto& c : compositions) pred.push_back(model.predict(c));
  auto m = regression_metrics(pred, targets);
  m.n_test = compositions.size();
  return m;
}

Dataset synthetic_dataset(std::size_t n, std::uint64_t seed, double noise) {
  static const std::vector<std::string> hosts = {"Li", "Na", "K",  "Mg", "Ca", "Al", "Ti", "V",  "Cr", "Mn",
                                                 "Fe", "Co", "Ni", "Cu", "Zr", "La", "Y",  "B",  "N",  "C",
                                                 "Nb", "Ce", "Sc", "Si", "Zn", "Pd"};
  SeededRng rng(seed);
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    std::map<std::string, double, std::less<>> amounts;
    const auto n_hosts = 1 + rng.below(3);
    while (amounts.size() < n_hosts) {
      amounts[hosts[rng.below(hosts.size())]] = static_cast<double>(1 + rng.below(30)) / 10.0;
    }
    if (rng.uniform() < 0.85) amounts["H"] = static_cast<double>(1 + rng.below(60)) / 10.0;
    Composition c(std::move(amounts));
    const auto fr = c.fractions();
    const auto h = fr.find("H");
    const double frac_h = h == fr.end() ? 0.0 : h->second;
    d.formulas.push_back(format_formula(c));
    d.targets.push_back(20.0 * frac_h + rng.normal(0.0, noise));
    d.compositions.push_back(std::move(c));
  }
  return d;
}

}  // namespace dive
