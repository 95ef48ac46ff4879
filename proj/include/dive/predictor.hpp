#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dive/composition.hpp"
#include "dive/gbdt.hpp"

namespace dive {

/// Deterministic random source: mt19937_64 bits with our own transforms, so
/// sequences do not depend on the standard library's distributions.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed);
  std::uint64_t next();
  double uniform();                        // [0, 1)
  std::size_t below(std::size_t bound);    // [0, bound), unbiased
  double normal(double mean, double sigma);  // Box-Muller
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

struct Dataset {
  std::vector<std::string> formulas;
  std::vector<Composition> compositions;
  std::vector<double> targets;
  std::size_t skipped = 0;  // rows without a usable formula, target or features
};

/// Reads JSONL rows (store export or any object with "formula" and the target
/// key). String targets are parsed as quantities of the field's kind.
Dataset load_dataset(const std::filesystem::path& path, const std::string& target_field);

struct ModelMetrics {
  double r2 = 0.0;
  double mae = 0.0;
  double rmse = 0.0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
};

/// R^2, MAE and RMSE; DegenerateTarget when the targets have zero variance.
ModelMetrics regression_metrics(const std::vector<double>& predicted, const std::vector<double>& target);

struct GridPoint {
  int n_trees = 0;
  int max_depth = 0;
  double learning_rate = 0.0;
  double cv_mse = 0.0;
};

struct TrainConfig {
  std::uint64_t seed = 7;
  std::vector<int> tree_counts = {100, 300, 600};
  std::vector<int> depths = {3, 5, 7};
  std::vector<double> learning_rates = {0.05, 0.1};
  double test_fraction = 0.2;
  int folds = 3;
};

struct TrainingMeta {
  std::uint64_t seed = 0;
  GridPoint chosen;
  std::vector<GridPoint> grid;  // grid order: trees, then depth, then rate
  std::size_t skipped_rows = 0;
};

class PredictorModel {
 public:
  PredictorModel() = default;
  PredictorModel(TreeEnsemble ensemble, std::string schema_hash, TrainingMeta meta, ModelMetrics metrics);

  /// SchemaMismatch when the model was trained on another feature schema.
  double predict(const Composition& c) const;
  double predict_features(const std::vector<double>& x) const { return ensemble_.predict(x); }

  const TreeEnsemble& ensemble() const { return ensemble_; }
  const std::string& schema_hash() const { return schema_hash_; }
  const TrainingMeta& meta() const { return meta_; }
  const ModelMetrics& metrics() const { return metrics_; }

  nlohmann::json to_json() const;
  static PredictorModel from_json(const nlohmann::json& j);
  /// Writes the JSON model file; returns its sha256.
  std::string save(const std::filesystem::path& path) const;
  static PredictorModel load(const std::filesystem::path& path);
  std::string digest() const;

 private:
  void check_schema() const;

  TreeEnsemble ensemble_;
  std::string schema_hash_;
  TrainingMeta meta_;
  ModelMetrics metrics_;
};

struct TrainResult {
  PredictorModel model;
  ModelMetrics metrics;
};

/// Seeded 80/20 split, grid search by k-fold CV MSE (ties to the first grid
/// point), refit on the training split, metrics on the held-out part.
/// Errors: DatasetTooSmall (< 25 rows), DegenerateTarget.
TrainResult train(const Dataset& data, const TrainConfig& config = {});

ModelMetrics evaluate_model(const PredictorModel& model, const std::vector<Composition>& compositions,
                            const std::vector<double>& targets);

/// Synthetic benchmark set: `n` random hydride-like compositions with target
/// 20 * fraction(H) + N(0, noise).
Dataset synthetic_dataset(std::size_t n, std::uint64_t seed, double noise = 0.1);

}  // namespace dive
