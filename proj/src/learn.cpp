#include "diffest/learn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "diffest/common.hpp"
#include "diffest/rng.hpp"

namespace diffest::learn {

using nlohmann::json;

std::pair<std::vector<std::string>, std::vector<std::string>> split(
    const std::vector<std::string>& ids, const SplitSpec& spec) {
  if (spec.train_fraction <= 0.0 || spec.train_fraction >= 1.0) {
    throw Error("split: train_fraction must lie strictly between 0 and 1");
  }
  if (ids.size() < 5) {
    throw Error("split: need at least 5 ids, got " + std::to_string(ids.size()));
  }
  std::vector<std::string> shuffled = ids;
  Rng rng(spec.seed);
  rng.shuffle(shuffled);
  const std::size_t n = shuffled.size();
  const std::size_t n_test = static_cast<std::size_t>(
      std::ceil((1.0 - spec.train_fraction) * static_cast<double>(n)));
  const std::size_t n_train = n - n_test;
  if (n_train == 0 || n_test == 0) throw Error("split: degenerate split");
  std::vector<std::string> train(shuffled.begin(), shuffled.begin() + n_train);
  std::vector<std::string> test(shuffled.begin() + n_train, shuffled.end());
  return {std::move(train), std::move(test)};
}

std::string family_name(Family f) {
  switch (f) {
    case Family::dummy: return "dummy";
    case Family::linear: return "linear";
    case Family::svr: return "svr";
    case Family::random_forest: return "random_forest";
  }
  return "dummy";
}

Family family_from_name(std::string_view name) {
  if (name == "dummy") return Family::dummy;
  if (name == "linear") return Family::linear;
  if (name == "svr") return Family::svr;
  if (name == "random_forest") return Family::random_forest;
  throw Error("unknown model family: '" + std::string(name) + "'");
}

std::string family_display(Family f) {
  switch (f) {
    case Family::dummy: return "Dummy Model";
    case Family::linear: return "Linear Regression";
    case Family::svr: return "Support Vector Machine";
    case Family::random_forest: return "Random Forest";
  }
  return "?";
}

void Scaler::fit(const linalg::Matrix& X) {
  mean.assign(X.cols, 0.0);
  stdev.assign(X.cols, 1.0);
  if (X.rows == 0) return;
  for (std::size_t c = 0; c < X.cols; ++c) {
    double m = 0.0;
    for (std::size_t r = 0; r < X.rows; ++r) m += X.at(r, c);
    m /= static_cast<double>(X.rows);
    double v = 0.0;
    for (std::size_t r = 0; r < X.rows; ++r) {
      const double d = X.at(r, c) - m;
      v += d * d;
    }
    v /= static_cast<double>(X.rows);
    mean[c] = m;
    stdev[c] = v > 0.0 ? std::sqrt(v) : 1.0;
  }
}

linalg::Matrix Scaler::apply(const linalg::Matrix& X) const {
  if (X.cols != mean.size()) {
    throw Error("scaler: feature count mismatch (" + std::to_string(X.cols) + " vs " +
                std::to_string(mean.size()) + ")");
  }
  linalg::Matrix out(X.rows, X.cols);
  for (std::size_t r = 0; r < X.rows; ++r) {
    for (std::size_t c = 0; c < X.cols; ++c) {
      out.at(r, c) = (X.at(r, c) - mean[c]) / stdev[c];
    }
  }
  return out;
}

namespace {

void check_xy(const linalg::Matrix& X, const std::vector<double>& y, const char* op) {
  if (X.rows != y.size()) {
    throw Error(std::string(op) + ": row/target mismatch (" + std::to_string(X.rows) + " vs " +
                std::to_string(y.size()) + ")");
  }
  for (double v : X.data) {
    if (!std::isfinite(v)) throw Error(std::string(op) + ": non-finite feature value");
  }
  for (double v : y) {
    if (!std::isfinite(v)) throw Error(std::string(op) + ": non-finite target value");
  }
}

double vector_mean(const std::vector<double>& y) {
  double s = 0.0;
  for (double v : y) s += v;
  return s / static_cast<double>(y.size());
}

}  // namespace

TrainedModel train_dummy(const std::vector<double>& y) {
  if (y.empty()) throw Error("train_dummy: empty target vector");
  TrainedModel model;
  model.family = Family::dummy;
  model.dummy.mean = vector_mean(y);
  return model;
}

TrainedModel train_linear(const linalg::Matrix& X, const std::vector<double>& y, double ridge) {
  check_xy(X, y, "train_linear");
  if (ridge < 0.0) throw Error("train_linear: negative ridge");
  if (X.rows == 0 || X.cols == 0) throw Error("train_linear: empty design matrix");

  TrainedModel model;
  model.family = Family::linear;
  model.hyperparameters["ridge"] = ridge;
  model.scaler.fit(X);
  const linalg::Matrix Xs = model.scaler.apply(X);

  double effective_ridge = ridge;
  if (X.cols >= X.rows && effective_ridge < 1e-8) effective_ridge = 1e-8;

  // Standardized columns are mean-zero, so the unpenalized intercept is just
  // the target mean and the slopes solve the centered system.
  const double y_mean = vector_mean(y);
  std::vector<double> centered(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) centered[i] = y[i] - y_mean;
  model.linear.coef = linalg::least_squares_qr(Xs, centered, effective_ridge);
  model.linear.intercept = y_mean;
  return model;
}

std::pair<std::vector<double>, double> linear_coefficients_raw(const TrainedModel& model) {
  if (model.family != Family::linear) throw Error("linear_coefficients_raw: not a linear model");
  std::vector<double> raw(model.linear.coef.size());
  double intercept = model.linear.intercept;
  for (std::size_t c = 0; c < raw.size(); ++c) {
    raw[c] = model.linear.coef[c] / model.scaler.stdev[c];
    intercept -= raw[c] * model.scaler.mean[c];
  }
  return {std::move(raw), intercept};
}

namespace {

std::vector<double> raw_predict(const TrainedModel& model, const linalg::Matrix& Xs);

}  // namespace

std::vector<double> predict(const TrainedModel& model, const linalg::Matrix& X) {
  if (X.rows == 0) return {};
  std::vector<double> out;
  if (model.family == Family::dummy) {
    out.assign(X.rows, model.dummy.mean);
  } else {
    if (X.cols != model.scaler.mean.size()) {
      throw Error("predict: feature count mismatch (" + std::to_string(X.cols) + " vs " +
                  std::to_string(model.scaler.mean.size()) + ")");
    }
    out = raw_predict(model, model.scaler.apply(X));
  }
  for (double& v : out) v = std::clamp(v, 0.0, 1.0);
  return out;
}

namespace {

double rf_predict_one(const RfTree& tree, const double* x) {
  int node = 0;
  for (;;) {
    const RfNode& n = tree.nodes[node];
    if (n.feature < 0) return n.value;
    node = x[n.feature] <= n.threshold ? n.left : n.right;
  }
}

std::vector<double> raw_predict(const TrainedModel& model, const linalg::Matrix& Xs) {
  std::vector<double> out(Xs.rows, 0.0);
  switch (model.family) {
    case Family::dummy:
      out.assign(Xs.rows, model.dummy.mean);
      break;
    case Family::linear:
      for (std::size_t r = 0; r < Xs.rows; ++r) {
        out[r] = model.linear.intercept +
                 linalg::dot(Xs.row(r), model.linear.coef.data(), Xs.cols);
      }
      break;
    case Family::svr: {
      const double gamma = model.hyperparameters.at("gamma");
      const auto& sv = model.svr.support_vectors;
      for (std::size_t r = 0; r < Xs.rows; ++r) {
        double f = model.svr.bias;
        for (std::size_t s = 0; s < sv.rows; ++s) {
          if (model.svr.dual_coef[s] == 0.0) continue;
          f += model.svr.dual_coef[s] *
               std::exp(-gamma * linalg::squared_distance(Xs.row(r), sv.row(s), Xs.cols));
        }
        out[r] = f;
      }
      break;
    }
    case Family::random_forest: {
      const auto& trees = model.rf.trees;
      if (trees.empty()) throw Error("predict: random forest has no trees");
      for (std::size_t r = 0; r < Xs.rows; ++r) {
        double s = 0.0;
        for (const auto& tree : trees) s += rf_predict_one(tree, Xs.row(r));
        out[r] = s / static_cast<double>(trees.size());
      }
      break;
    }
  }
  return out;
}

}  // namespace

std::vector<double> svr_decision(const TrainedModel& model, const linalg::Matrix& X) {
  if (model.family != Family::svr) throw Error("svr_decision: not an SVR model");
  return raw_predict(model, model.scaler.apply(X));
}

GridSpec default_grid(Family family, std::size_t n_features, std::uint64_t seed) {
  GridSpec grid;
  grid.seed = seed;
  switch (family) {
    case Family::dummy:
      break;
    case Family::linear:
      grid.axes = {{"ridge", {0.0, 1e-4, 1e-2, 1.0}}};
      break;
    case Family::svr:
      grid.axes = {{"C", {0.1, 1.0, 10.0, 100.0}},
                   {"epsilon", {0.01, 0.05, 0.1}},
                   {"gamma",
                    {0.01, 0.1, n_features > 0 ? 1.0 / static_cast<double>(n_features) : 1.0,
                     1.0}}};
      break;
    case Family::random_forest:
      grid.axes = {{"trees", {100.0, 300.0}},
                   {"max_depth", {0.0, 3.0, 5.0}},
                   {"min_leaf", {1.0, 2.0, 4.0}}};
      break;
  }
  return grid;
}

TrainedModel train_with(Family family, const Hyperparameters& hp, const linalg::Matrix& X,
                        const std::vector<double>& y, std::uint64_t seed) {
  auto get = [&](const char* name, double fallback) {
    auto it = hp.find(name);
    return it == hp.end() ? fallback : it->second;
  };
  switch (family) {
    case Family::dummy:
      return train_dummy(y);
    case Family::linear:
      return train_linear(X, y, get("ridge", 0.0));
    case Family::svr: {
      SvrConfig config;
      config.C = get("C", config.C);
      config.epsilon = get("epsilon", config.epsilon);
      config.gamma = get("gamma", config.gamma);
      return train_svr(X, y, config);
    }
    case Family::random_forest: {
      RfConfig config;
      config.trees = static_cast<int>(get("trees", config.trees));
      config.max_depth = static_cast<int>(get("max_depth", 0.0));
      config.min_leaf = static_cast<int>(get("min_leaf", config.min_leaf));
      config.seed = seed;
      return train_rf(X, y, config);
    }
  }
  throw Error("train_with: unknown family");
}

namespace {

double fold_rmse_of(const std::vector<double>& pred, const std::vector<double>& truth) {
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - truth[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(pred.size()));
}

}  // namespace

GridResult grid_search(Family family, const GridSpec& grid, const linalg::Matrix& X,
                       const std::vector<double>& y, ExecMode mode) {
  check_xy(X, y, "grid_search");
  if (grid.folds < 2) throw Error("grid_search: folds must be >= 2");
  for (const auto& [name, values] : grid.axes) {
    if (values.empty()) throw Error("grid_search: empty axis '" + name + "'");
  }
  const std::size_t n = X.rows;
  if (n < static_cast<std::size_t>(grid.folds)) {
    throw Error("grid_search: " + std::to_string(n) + " samples cannot fill " +
                std::to_string(grid.folds) + " folds");
  }

  // Seeded fold assignment: shuffle rows, then contiguous chunks.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(grid.seed, "folds"));
  rng.shuffle(order);
  std::vector<std::pair<std::size_t, std::size_t>> fold_bounds;  // [begin,end) in order
  for (int f = 0; f < grid.folds; ++f) {
    const std::size_t b = n * static_cast<std::size_t>(f) / static_cast<std::size_t>(grid.folds);
    const std::size_t e =
        n * static_cast<std::size_t>(f + 1) / static_cast<std::size_t>(grid.folds);
    if (e == b) throw Error("grid_search: empty fold");
    fold_bounds.emplace_back(b, e);
  }

  // Cartesian product of the axes, first axis outermost.
  std::vector<Hyperparameters> cells;
  std::size_t total = 1;
  for (const auto& axis : grid.axes) total *= axis.second.size();
  for (std::size_t idx = 0; idx < total; ++idx) {
    Hyperparameters hp;
    std::size_t rem = idx;
    for (std::size_t a = grid.axes.size(); a-- > 0;) {
      const auto& [name, values] = grid.axes[a];
      hp[name] = values[rem % values.size()];
      rem /= values.size();
    }
    cells.push_back(std::move(hp));
  }
  if (cells.empty()) cells.push_back({});

  std::vector<CvCell> table(cells.size());
  parallel_for(cells.size(), mode, [&](std::size_t cell_idx) {
    CvCell cell;
    cell.hp = cells[cell_idx];
    const std::uint64_t cell_seed = derive_seed(grid.seed, cell_idx);
    for (int f = 0; f < grid.folds; ++f) {
      const auto [vb, ve] = fold_bounds[static_cast<std::size_t>(f)];
      linalg::Matrix Xt(n - (ve - vb), X.cols);
      linalg::Matrix Xv(ve - vb, X.cols);
      std::vector<double> yt, yv;
      std::size_t ti = 0, vi = 0;
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t row = order[k];
        if (k >= vb && k < ve) {
          std::copy(X.row(row), X.row(row) + X.cols, Xv.row(vi++));
          yv.push_back(y[row]);
        } else {
          std::copy(X.row(row), X.row(row) + X.cols, Xt.row(ti++));
          yt.push_back(y[row]);
        }
      }
      const TrainedModel m = train_with(family, cell.hp, Xt, yt, derive_seed(cell_seed, f));
      cell.fold_rmse.push_back(fold_rmse_of(predict(m, Xv), yv));
    }
    double s = 0.0;
    for (double v : cell.fold_rmse) s += v;
    cell.mean_rmse = s / static_cast<double>(cell.fold_rmse.size());
    table[cell_idx] = std::move(cell);
  });

  std::size_t best_idx = 0;
  for (std::size_t i = 1; i < table.size(); ++i) {
    if (table[i].mean_rmse < table[best_idx].mean_rmse) best_idx = i;
  }

  GridResult result;
  result.best = table[best_idx].hp;
  result.table = std::move(table);
  result.refit = train_with(family, result.best, X, y, derive_seed(grid.seed, "refit"));
  return result;
}

void validate_feature_names(const TrainedModel& model, const std::vector<std::string>& names) {
  if (model.feature_names.empty()) return;
  if (model.feature_names != names) {
    throw Error("model expects different feature columns than provided");
  }
}

void save_model_json(const TrainedModel& model, const std::string& path) {
  json doc;
  doc["family"] = family_name(model.family);
  doc["hyperparameters"] = model.hyperparameters;
  doc["feature_names"] = model.feature_names;
  doc["scaler"] = {{"mean", model.scaler.mean}, {"stdev", model.scaler.stdev}};
  switch (model.family) {
    case Family::dummy:
      doc["params"] = {{"mean", model.dummy.mean}};
      break;
    case Family::linear:
      doc["params"] = {{"coef", model.linear.coef}, {"intercept", model.linear.intercept}};
      break;
    case Family::svr: {
      json sv = json::array();
      for (std::size_t r = 0; r < model.svr.support_vectors.rows; ++r) {
        sv.push_back(std::vector<double>(
            model.svr.support_vectors.row(r),
            model.svr.support_vectors.row(r) + model.svr.support_vectors.cols));
      }
      doc["params"] = {{"support", std::move(sv)},
                       {"columns", model.svr.support_vectors.cols},
                       {"dual_coef", model.svr.dual_coef},
                       {"bias", model.svr.bias},
                       {"iterations", model.svr.iterations}};
      break;
    }
    case Family::random_forest: {
      json trees = json::array();
      for (const auto& tree : model.rf.trees) {
        json nodes = json::array();
        for (const auto& n : tree.nodes) {
          nodes.push_back({{"f", n.feature},
                           {"t", n.threshold},
                           {"v", n.value},
                           {"l", n.left},
                           {"r", n.right}});
        }
        trees.push_back({{"nodes", std::move(nodes)}});
      }
      doc["params"] = {{"trees", std::move(trees)}};
      break;
    }
  }
  write_file(path, doc.dump(2) + "\n");
}

TrainedModel load_model_json(const std::string& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error(path + ": malformed model JSON: " + e.what());
  }
  TrainedModel model;
  try {
    model.family = family_from_name(doc.at("family").get<std::string>());
    model.hyperparameters = doc.value("hyperparameters", Hyperparameters{});
    model.feature_names = doc.value("feature_names", std::vector<std::string>{});
    if (doc.contains("scaler")) {
      model.scaler.mean = doc["scaler"].at("mean").get<std::vector<double>>();
      model.scaler.stdev = doc["scaler"].at("stdev").get<std::vector<double>>();
    }
    const json& params = doc.at("params");
    switch (model.family) {
      case Family::dummy:
        model.dummy.mean = params.at("mean").get<double>();
        break;
      case Family::linear:
        model.linear.coef = params.at("coef").get<std::vector<double>>();
        model.linear.intercept = params.at("intercept").get<double>();
        break;
      case Family::svr: {
        const auto rows = params.at("support");
        const std::size_t cols = params.at("columns").get<std::size_t>();
        model.svr.support_vectors = linalg::Matrix(rows.size(), cols);
        for (std::size_t r = 0; r < rows.size(); ++r) {
          const auto row = rows[r].get<std::vector<double>>();
          if (row.size() != cols) throw Error(path + ": ragged support vectors");
          std::copy(row.begin(), row.end(), model.svr.support_vectors.row(r));
        }
        model.svr.dual_coef = params.at("dual_coef").get<std::vector<double>>();
        model.svr.bias = params.at("bias").get<double>();
        model.svr.iterations = params.value("iterations", 0);
        break;
      }
      case Family::random_forest:
        for (const auto& tree : params.at("trees")) {
          RfTree t;
          for (const auto& n : tree.at("nodes")) {
            RfNode node;
            node.feature = n.at("f").get<int>();
            node.threshold = n.at("t").get<double>();
            node.value = n.at("v").get<double>();
            node.left = n.at("l").get<int>();
            node.right = n.at("r").get<int>();
            t.nodes.push_back(node);
          }
          model.rf.trees.push_back(std::move(t));
        }
        break;
    }
  } catch (const json::exception& e) {
    throw Error(path + ": invalid model document: " + e.what());
  }
  return model;
}

}  // namespace diffest::learn
