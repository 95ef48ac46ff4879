#include "dive/gbdt.hpp"

#include <algorithm>
#include <numeric>

#include "dive/error.hpp"

namespace dive {

using nlohmann::json;

double RegressionTree::predict(const std::vector<double>& x) const {
  int n = 0;
  while (feature[n] >= 0) n = x[feature[n]] < threshold[n] ? left[n] : right[n];
  return value[n];
}

double TreeEnsemble::predict(const std::vector<double>& x) const {
  double sum = 0.0;
  for (const auto& t : trees) sum += t.predict(x);
  return base_score + learning_rate * sum;
}

namespace {

struct NodeStats {
  double g = 0.0;  // sum of residuals
  double h = 0.0;  // sample count
};

struct Candidate {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
};

double split_threshold(double lo, double hi) {
  const double mid = lo + (hi - lo) / 2.0;
  // mid can round down onto lo, which would send lo right
  return mid > lo ? mid : hi;
}

}  // namespace

TreeEnsemble fit_gbdt(const TrainMatrix& x, const std::vector<double>& y, const GbdtParams& params,
                      const std::function<void(std::size_t, const RegressionTree&)>& on_tree) {
  const std::size_t n = x.rows();
  const std::size_t nf = x.columns.size();
  if (n == 0 || y.size() != n) throw Error(ErrorCode::InvalidArgument, "training matrix and targets disagree");
  if (params.n_trees < 1 || params.max_depth < 1 || !(params.learning_rate > 0)) {
    throw Error(ErrorCode::InvalidArgument, "invalid boosting parameters");
  }

  // presort once; constant columns can never split
  std::vector<int> active;
  std::vector<std::vector<std::uint32_t>> order(nf);
  for (std::size_t f = 0; f < nf; ++f) {
    const auto& col = x.columns[f];
    auto [mn, mx] = std::minmax_element(col.begin(), col.end());
    if (*mn == *mx) continue;
    active.push_back(static_cast<int>(f));
    auto& o = order[f];
    o.resize(n);
    std::iota(o.begin(), o.end(), 0u);
    std::stable_sort(o.begin(), o.end(), [&col](std::uint32_t a, std::uint32_t b) { return col[a] < col[b]; });
  }

  TreeEnsemble model;
  model.learning_rate = params.learning_rate;
  double ysum = 0.0;
  for (double v : y) ysum += v;
  model.base_score = ysum / static_cast<double>(n);

  std::vector<double> leaf_sum(n, 0.0), residual(n);
  std::vector<int> node_of(n);
  const double lambda = params.lambda;
  auto score = [lambda](double g, double h) { return g * g / (h + lambda); };

  for (int t = 0; t < params.n_trees; ++t) {
    for (std::size_t i = 0; i < n; ++i) residual[i] = y[i] - (model.base_score + params.learning_rate * leaf_sum[i]);

    RegressionTree tree;
    auto add_node = [&tree] {
      tree.feature.push_back(-1);
      tree.threshold.push_back(0.0);
      tree.left.push_back(-1);
      tree.right.push_back(-1);
      tree.value.push_back(0.0);
      return static_cast<int>(tree.feature.size() - 1);
    };
    add_node();
    std::fill(node_of.begin(), node_of.end(), 0);
    std::vector<NodeStats> stats(1);
    for (std::size_t i = 0; i < n; ++i) {
      stats[0].g += residual[i];
      stats[0].h += 1.0;
    }
    std::vector<int> open = {0};

    for (int depth = 0; depth < params.max_depth && !open.empty(); ++depth) {
      std::vector<int> slot(tree.node_count(), -1);
      for (std::size_t k = 0; k < open.size(); ++k) slot[open[k]] = static_cast<int>(k);
      std::vector<Candidate> best(open.size());
      std::vector<double> gl(open.size()), hl(open.size()), last(open.size());

      for (int f : active) {
        std::fill(gl.begin(), gl.end(), 0.0);
        std::fill(hl.begin(), hl.end(), 0.0);
        const auto& col = x.columns[f];
        for (auto i : order[f]) {
          const int k = slot[node_of[i]];
          if (k < 0) continue;
          const double v = col[i];
          const auto& s = stats[open[k]];
          if (hl[k] >= params.min_child_weight && v != last[k] && s.h - hl[k] >= params.min_child_weight) {
            const double gain = score(gl[k], hl[k]) + score(s.g - gl[k], s.h - hl[k]) - score(s.g, s.h);
            if (gain > best[k].gain) best[k] = {gain, f, split_threshold(last[k], v)};
          }
          gl[k] += residual[i];
          hl[k] += 1.0;
          last[k] = v;
        }
      }

      std::vector<int> next_open;
      for (std::size_t k = 0; k < open.size(); ++k) {
        const int node = open[k];
        if (best[k].feature < 0) continue;
        const int l = add_node();
        const int r = add_node();
        tree.feature[node] = best[k].feature;
        tree.threshold[node] = best[k].threshold;
        tree.left[node] = l;
        tree.right[node] = r;
        next_open.push_back(l);
        next_open.push_back(r);
      }
      if (next_open.empty()) break;
      stats.resize(tree.node_count());
      for (std::size_t i = 0; i < n; ++i) {
        const int node = node_of[i];
        if (tree.feature[node] < 0) continue;
        const int child = x.columns[tree.feature[node]][i] < tree.threshold[node] ? tree.left[node] : tree.right[node];
        node_of[i] = child;
        stats[child].g += residual[i];
        stats[child].h += 1.0;
      }
      open = std::move(next_open);
    }

    for (std::size_t node = 0; node < tree.node_count(); ++node) {
      if (tree.feature[node] < 0) tree.value[node] = stats[node].g / (stats[node].h + lambda);
    }
    for (std::size_t i = 0; i < n; ++i) leaf_sum[i] += tree.value[node_of[i]];
    if (on_tree) on_tree(static_cast<std::size_t>(t), tree);
    model.trees.push_back(std::move(tree));
  }
  return model;
}

json to_json(const RegressionTree& t) {
  return json{{"feature", t.feature}, {"threshold", t.threshold}, {"left", t.left}, {"right", t.right},
              {"value", t.value}};
}

RegressionTree tree_from_json(const json& j) {
  RegressionTree t;
  t.feature = j.at("feature").get<std::vector<int>>();
  t.threshold = j.at("threshold").get<std::vector<double>>();
  t.left = j.at("left").get<std::vector<int>>();
  t.right = j.at("right").get<std::vector<int>>();
  t.value = j.at("value").get<std::vector<double>>();
  const auto n = t.feature.size();
  if (n == 0 || t.threshold.size() != n || t.left.size() != n || t.right.size() != n || t.value.size() != n) {
    throw Error(ErrorCode::InvalidArgument, "malformed tree");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (t.feature[i] < 0) continue;
    // children always come after their parent, which also rules out cycles
    auto ok = [n, i](int c) { return c > static_cast<int>(i) && static_cast<std::size_t>(c) < n; };
    if (!ok(t.left[i]) || !ok(t.right[i])) throw Error(ErrorCode::InvalidArgument, "tree child index out of range");
  }
  return t;
}

}  // namespace dive
