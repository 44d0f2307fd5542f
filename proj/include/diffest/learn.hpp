#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "diffest/linalg.hpp"
#include "diffest/parallel.hpp"

namespace diffest::learn {

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 42;
};

// Seeded shuffle, then test takes ceil((1-fraction)*n) ids. With 0.8 this
// yields 47/12 on 59 ids and 42/11 on 53.
std::pair<std::vector<std::string>, std::vector<std::string>> split(
    const std::vector<std::string>& ids, const SplitSpec& spec);

enum class Family { dummy, linear, svr, random_forest };

std::string family_name(Family f);
Family family_from_name(std::string_view name);
// Report-facing label, e.g. "Support Vector Machine".
std::string family_display(Family f);

// Per-column training mean and (population) standard deviation. Zero-spread
// columns scale by 1.
struct Scaler {
  std::vector<double> mean;
  std::vector<double> stdev;

  void fit(const linalg::Matrix& X);
  linalg::Matrix apply(const linalg::Matrix& X) const;
};

struct DummyParams {
  double mean = 0.0;
};

// Coefficients live in standardized feature space.
struct LinearParams {
  std::vector<double> coef;
  double intercept = 0.0;
};

struct SvrParams {
  linalg::Matrix support_vectors;  // standardized rows
  std::vector<double> dual_coef;   // alpha - alpha*, one per training row
  double bias = 0.0;
  int iterations = 0;
};

struct RfNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  double value = 0.0;
  int left = -1;
  int right = -1;
};

struct RfTree {
  std::vector<RfNode> nodes;  // node 0 is the root
};

struct RfParams {
  std::vector<RfTree> trees;
};

using Hyperparameters = std::map<std::string, double>;

struct TrainedModel {
  Family family = Family::dummy;
  Hyperparameters hyperparameters;
  Scaler scaler;
  std::vector<std::string> feature_names;  // empty when unknown
  DummyParams dummy;
  LinearParams linear;
  SvrParams svr;
  RfParams rf;
};

TrainedModel train_dummy(const std::vector<double>& y);

// Ridge-stabilized least squares on standardized columns; when the design is
// wide (cols >= rows) a floor of 1e-8 is applied even if ridge is 0.
TrainedModel train_linear(const linalg::Matrix& X, const std::vector<double>& y, double ridge);

// De-standardized view of a linear model: (coefficients in raw units, intercept).
std::pair<std::vector<double>, double> linear_coefficients_raw(const TrainedModel& model);

struct SvrConfig {
  double C = 1.0;
  double epsilon = 0.1;
  double gamma = 0.1;
  double kkt_tol = 1e-3;
  long max_iterations = 1000000;
};

// Epsilon-insensitive SVR with an RBF kernel, solved by sequential minimal
// optimization on the dual.
TrainedModel train_svr(const linalg::Matrix& X, const std::vector<double>& y,
                       const SvrConfig& config);

// Unclamped decision values, for diagnostics and KKT checks.
std::vector<double> svr_decision(const TrainedModel& model, const linalg::Matrix& X);

struct RfConfig {
  int trees = 100;
  int max_depth = 0;  // 0 = unlimited
  int min_leaf = 1;
  bool bootstrap = true;
  std::uint64_t seed = 42;
  ExecMode mode = ExecMode::serial;
};

// Bootstrap-sampled CART regression trees; variance-reduction splits over
// sqrt(d) feature subsets per node; prediction is the tree mean.
TrainedModel train_rf(const linalg::Matrix& X, const std::vector<double>& y,
                      const RfConfig& config);

// Applies the stored scaler, runs the family predictor, clamps to [0,1].
std::vector<double> predict(const TrainedModel& model, const linalg::Matrix& X);

struct GridSpec {
  std::vector<std::pair<std::string, std::vector<double>>> axes;
  int folds = 5;
  std::uint64_t seed = 42;
};

GridSpec default_grid(Family family, std::size_t n_features, std::uint64_t seed);

struct CvCell {
  Hyperparameters hp;
  double mean_rmse = 0.0;
  std::vector<double> fold_rmse;
};

struct GridResult {
  Hyperparameters best;
  std::vector<CvCell> table;  // grid enumeration order
  TrainedModel refit;         // best cell refit on the full training set
};

// Mean validation RMSE per cell over seeded folds; ties keep the earlier
// cell in enumeration order.
GridResult grid_search(Family family, const GridSpec& grid, const linalg::Matrix& X,
                       const std::vector<double>& y, ExecMode mode = ExecMode::serial);

// Trains one model for explicit hyperparameters (grid cells and refits).
TrainedModel train_with(Family family, const Hyperparameters& hp, const linalg::Matrix& X,
                        const std::vector<double>& y, std::uint64_t seed);

void save_model_json(const TrainedModel& model, const std::string& path);
TrainedModel load_model_json(const std::string& path);

// Column-name check for matrices fed to a loaded model.
void validate_feature_names(const TrainedModel& model, const std::vector<std::string>& names);

}  // namespace diffest::learn
