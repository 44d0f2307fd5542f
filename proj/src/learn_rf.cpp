#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "diffest/common.hpp"
#include "diffest/learn.hpp"
#include "diffest/rng.hpp"

namespace diffest::learn {

namespace {

struct TreeBuilder {
  const linalg::Matrix& X;
  const std::vector<double>& y;
  int max_depth;
  int min_leaf;
  std::size_t mtry;
  Rng& rng;
  RfTree tree;

  // (value, sample) pairs reused across nodes to avoid reallocation.
  std::vector<std::pair<double, std::size_t>> sorted;

  int build(std::vector<std::size_t>& samples, int depth) {
    const int node_id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();

    double sum = 0.0;
    for (std::size_t s : samples) sum += y[s];
    const double mean = sum / static_cast<double>(samples.size());
    double sse = 0.0;
    for (std::size_t s : samples) {
      const double d = y[s] - mean;
      sse += d * d;
    }
    tree.nodes[node_id].value = mean;

    const bool depth_capped = max_depth > 0 && depth >= max_depth;
    if (samples.size() < 2 * static_cast<std::size_t>(min_leaf) || sse <= 0.0 || depth_capped) {
      return node_id;
    }

    // Features in seeded shuffled order; evaluate the first mtry non-constant
    // ones. Constant features do not use up the budget, so a split is always
    // found when the rows are distinguishable.
    std::vector<std::size_t> feature_order(X.cols);
    std::iota(feature_order.begin(), feature_order.end(), 0);
    rng.shuffle(feature_order);

    // Maximizing the sum of per-side squared means minimizes the weighted
    // variance after the split; anything above the unsplit baseline is a
    // strict improvement.
    const double baseline = sum * sum / static_cast<double>(samples.size());
    int best_feature = -1;
    double best_threshold = 0.0;
    double best_score = baseline;
    std::size_t tried = 0;

    for (std::size_t f : feature_order) {
      if (tried >= mtry && best_feature >= 0) break;
      sorted.clear();
      for (std::size_t s : samples) sorted.emplace_back(X.at(s, f), s);
      std::sort(sorted.begin(), sorted.end());
      if (sorted.front().first == sorted.back().first) continue;  // constant
      ++tried;

      double left_sum = 0.0;
      const std::size_t n = sorted.size();
      for (std::size_t k = 0; k + 1 < n; ++k) {
        left_sum += y[sorted[k].second];
        const std::size_t n_left = k + 1;
        const std::size_t n_right = n - n_left;
        if (n_left < static_cast<std::size_t>(min_leaf) ||
            n_right < static_cast<std::size_t>(min_leaf)) {
          continue;
        }
        if (sorted[k].first == sorted[k + 1].first) continue;
        const double right_sum = sum - left_sum;
        const double score = left_sum * left_sum / static_cast<double>(n_left) +
                             right_sum * right_sum / static_cast<double>(n_right);
        if (score > best_score) {
          best_score = score;
          best_feature = static_cast<int>(f);
          best_threshold = (sorted[k].first + sorted[k + 1].first) / 2.0;
        }
      }
    }

    if (best_feature < 0) return node_id;

    std::vector<std::size_t> left, right;
    for (std::size_t s : samples) {
      if (X.at(s, static_cast<std::size_t>(best_feature)) <= best_threshold) left.push_back(s);
      else right.push_back(s);
    }
    samples.clear();
    samples.shrink_to_fit();

    tree.nodes[node_id].feature = best_feature;
    tree.nodes[node_id].threshold = best_threshold;
    const int left_id = build(left, depth + 1);
    tree.nodes[node_id].left = left_id;
    const int right_id = build(right, depth + 1);
    tree.nodes[node_id].right = right_id;
    return node_id;
  }
};

}  // namespace

TrainedModel train_rf(const linalg::Matrix& X, const std::vector<double>& y,
                      const RfConfig& config) {
  if (X.rows != y.size()) throw Error("train_rf: row/target mismatch");
  if (X.rows < 2) throw Error("train_rf: need at least 2 training rows");
  if (X.cols == 0) throw Error("train_rf: empty design matrix");
  if (config.trees < 1) throw Error("train_rf: need at least 1 tree");
  if (config.min_leaf < 1) throw Error("train_rf: min_leaf must be >= 1");

  TrainedModel model;
  model.family = Family::random_forest;
  model.hyperparameters = {{"trees", static_cast<double>(config.trees)},
                           {"max_depth", static_cast<double>(config.max_depth)},
                           {"min_leaf", static_cast<double>(config.min_leaf)},
                           {"bootstrap", config.bootstrap ? 1.0 : 0.0}};
  model.scaler.fit(X);
  const linalg::Matrix Xs = model.scaler.apply(X);

  const std::size_t mtry = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(X.cols)))));

  model.rf.trees.resize(static_cast<std::size_t>(config.trees));
  parallel_for(static_cast<std::size_t>(config.trees), config.mode, [&](std::size_t t) {
    Rng rng(derive_seed(config.seed, t));
    std::vector<std::size_t> samples;
    samples.reserve(Xs.rows);
    if (config.bootstrap) {
      for (std::size_t i = 0; i < Xs.rows; ++i) {
        samples.push_back(static_cast<std::size_t>(rng.below(Xs.rows)));
      }
    } else {
      samples.resize(Xs.rows);
      std::iota(samples.begin(), samples.end(), 0);
    }
    TreeBuilder builder{Xs, y, config.max_depth, config.min_leaf, mtry, rng, {}, {}};
    builder.build(samples, 0);
    model.rf.trees[t] = std::move(builder.tree);
  });
  return model;
}

}  // namespace diffest::learn
