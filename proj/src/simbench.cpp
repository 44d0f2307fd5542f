#include "diffest/simbench.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <nlohmann/json.hpp>

#include "diffest/features.hpp"
#include "diffest/rng.hpp"

namespace diffest::simbench {

using nlohmann::json;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

namespace {

const char* kEasyTokens[] = {"sum",      "mean",    "vector",   "matrix",  "gradient",
                             "linear",   "simple",  "basic",    "average", "scalar",
                             "constant", "identity", "addition", "product", "norm",
                             "square",   "positive", "finite",   "bounded", "convex"};

const char* kHardTokens[] = {"manifold",    "spectral",   "stochastic", "variational",
                             "posterior",   "entropy",    "divergence", "lipschitz",
                             "hessian",     "eigenvalue", "saddle",     "regularizer",
                             "martingale",  "asymptotic", "measurable", "topology",
                             "conjugate",   "curvature",  "ergodic",    "subgradient"};

constexpr std::size_t kEasyCount = sizeof(kEasyTokens) / sizeof(kEasyTokens[0]);
constexpr std::size_t kHardCount = sizeof(kHardTokens) / sizeof(kHardTokens[0]);

// Vocabulary leans harder with rising b, so text carries a weak difficulty
// signal for the TF-IDF baseline.
std::string generate_text(double difficulty_b, Rng& rng) {
  const double p_hard = sigmoid(difficulty_b);
  const std::size_t n_tokens = 8 + rng.below(6);
  std::string text = "Claim: the";
  for (std::size_t i = 0; i < n_tokens; ++i) {
    const char* tok = rng.bernoulli(p_hard)
                          ? kHardTokens[rng.below(kHardCount)]
                          : kEasyTokens[rng.below(kEasyCount)];
    text += ' ';
    text += tok;
  }
  text += " term of $\\nabla f$ is well-defined.";
  return text;
}

}  // namespace

SimulatedBank simulate_bank_with_difficulties(const std::vector<double>& difficulties,
                                              const CohortModel& cohort, std::uint64_t seed,
                                              ExecMode mode) {
  if (difficulties.empty()) throw Error("simulate_bank: need at least one question");
  if (cohort.n_students < 1) throw Error("simulate_bank: need at least one student");
  if (cohort.ability_std <= 0.0) throw Error("simulate_bank: ability_std must be positive");

  const std::size_t n = difficulties.size();
  std::vector<double> abilities(static_cast<std::size_t>(cohort.n_students));
  {
    Rng rng(derive_seed(cohort.seed, "abilities"));
    for (auto& a : abilities) a = cohort.ability_mean + cohort.ability_std * rng.normal();
  }

  SimulatedBank sim;
  sim.difficulties = difficulties;
  sim.bank.items.resize(n);
  sim.bank.results.resize(n);

  parallel_for(n, mode, [&](std::size_t q) {
    Rng rng(derive_seed(seed, q));
    corpus::QuestionItem item;
    item.id = "q" + std::to_string(q + 1);
    item.course = "synthetic";
    item.text = generate_text(difficulties[q], rng);
    item.correct_answer = rng.bernoulli(0.5);
    item.status = corpus::ItemStatus::active;
    item.years = {"sim"};

    long correct = 0;
    for (const double theta : abilities) {
      if (rng.bernoulli(sigmoid(theta - difficulties[q]))) ++correct;
    }
    sim.bank.items[q] = std::move(item);
    sim.bank.results[q] = corpus::CohortResult{"q" + std::to_string(q + 1), "sim",
                                               correct, cohort.n_students};
  });
  corpus::validate_bank(sim.bank);
  return sim;
}

SimulatedBank simulate_bank(int n_questions, const CohortModel& cohort, double difficulty_mean,
                            double difficulty_std, std::uint64_t seed, ExecMode mode) {
  if (n_questions < 1) throw Error("simulate_bank: need at least one question");
  std::vector<double> difficulties(static_cast<std::size_t>(n_questions));
  Rng rng(derive_seed(seed, "difficulties"));
  for (auto& b : difficulties) b = difficulty_mean + difficulty_std * rng.normal();
  return simulate_bank_with_difficulties(difficulties, cohort, seed, mode);
}

std::string mock_solver_fixture_json(const SimulatedBank& sim,
                                     const std::vector<MockSolverModel>& ensemble) {
  if (ensemble.empty()) throw Error("mock_solver_fixture: empty ensemble");
  json entries = json::array();
  for (const auto& solver : ensemble) {
    if (solver.noise_std < 0.0) throw Error("mock_solver_fixture: negative noise_std");
    for (std::size_t q = 0; q < sim.bank.items.size(); ++q) {
      const auto& item = sim.bank.items[q];
      Rng rng(derive_seed(derive_seed(solver.seed, solver.name), q));
      const double noise = solver.noise_std > 0.0 ? solver.noise_std * rng.normal() : 0.0;
      const double p_correct = sigmoid(solver.skill_theta - sim.difficulties[q] + noise);
      const double logprob = std::log(std::max(p_correct, 1.0 - p_correct));
      for (probe::ChoiceOrder order : probe::kAllOrders) {
        const bool answers_correctly = rng.bernoulli(p_correct);
        const std::string right = probe::correct_label(item.correct_answer, order);
        const std::string label = answers_correctly ? right : (right == "A" ? "B" : "A");
        entries.push_back({{"solver", solver.name},
                           {"question_id", item.id},
                           {"order", probe::order_name(order)},
                           {"label", label},
                           {"logprob", logprob}});
      }
    }
  }
  json doc;
  doc["entries"] = std::move(entries);
  return doc.dump(2) + "\n";
}

BenchmarkConfig default_benchmark_config(std::uint64_t seed) {
  BenchmarkConfig config;
  config.seed = seed;
  config.n_questions = 120;
  config.cohort = CohortModel{100, 0.0, 1.0, derive_seed(seed, "cohort")};
  config.difficulty_mean = 0.0;
  config.difficulty_std = 1.4;
  config.split = learn::SplitSpec{0.8, derive_seed(seed, "split")};
  const double skills[] = {-0.8, -0.4, 0.0, 0.4, 0.8, 1.2, 1.6, 2.0, 2.4};
  for (int i = 0; i < 9; ++i) {
    MockSolverModel solver;
    solver.name = "mock-0" + std::to_string(i + 1);
    solver.skill_theta = skills[i];
    solver.noise_std = 0.5;
    solver.seed = derive_seed(seed, solver.name);
    config.ensemble.push_back(std::move(solver));
  }
  return config;
}

namespace {

struct LabeledSeries {
  std::string method;
  std::string features;
  bool is_dummy = false;
  eval::EstimateSeries series;
};

}  // namespace

BenchmarkReport benchmark_run(const BenchmarkConfig& config) {
  const SimulatedBank sim = simulate_bank(config.n_questions, config.cohort,
                                          config.difficulty_mean, config.difficulty_std,
                                          config.seed, config.mode);
  const auto truths = corpus::compute_ground_truth(sim.bank);
  std::map<std::string, double> truth_of;
  for (const auto& gt : truths) truth_of[gt.question_id] = gt.p_plus;

  probe::MockBackend backend =
      probe::MockBackend::from_json_text(mock_solver_fixture_json(sim, config.ensemble));
  std::vector<probe::SolverSpec> ensemble;
  for (const auto& m : config.ensemble) {
    probe::SolverSpec spec;
    spec.name = m.name;
    spec.endpoint_url = "mock://";
    spec.model_id = m.name;
    ensemble.push_back(std::move(spec));
  }
  probe::CacheStore cache;
  probe::ProbeOptions probe_options;
  probe_options.mode = config.mode;
  probe_options.seed = config.seed;
  const probe::ProbeResult probed = probe_bank(sim.bank, ensemble, backend, cache, probe_options);
  if (!probed.failures.empty()) {
    throw Error("benchmark_run: mock probe failed for (" + probed.failures.front().solver_name +
                ", " + probed.failures.front().question_id + "): " +
                probed.failures.front().message);
  }

  std::vector<std::string> ids;
  std::map<std::string, std::string> text_of;
  for (const auto& item : sim.bank.items) {
    ids.push_back(item.id);
    text_of[item.id] = item.text;
  }
  auto [train_ids, test_ids] = learn::split(ids, config.split);

  std::vector<std::string> train_texts;
  for (const auto& id : train_ids) train_texts.push_back(text_of[id]);
  const features::TfidfModel tfidf_model = features::fit_tfidf(train_texts);
  std::vector<std::string> all_texts;
  for (const auto& id : ids) all_texts.push_back(text_of[id]);
  const features::FeatureMatrix tfidf_all =
      features::transform_tfidf(tfidf_model, all_texts, ids, config.mode);

  std::map<features::FeatureMode, features::FeatureMatrix> design;
  design[features::FeatureMode::uncertainty] =
      features::assemble(features::FeatureMode::uncertainty, probed.signals, std::nullopt, ids);
  design[features::FeatureMode::tfidf] =
      features::assemble(features::FeatureMode::tfidf, probed.signals, tfidf_all, ids);
  design[features::FeatureMode::both] =
      features::assemble(features::FeatureMode::both, probed.signals, tfidf_all, ids);

  auto targets = [&](const std::vector<std::string>& subset) {
    std::vector<double> y;
    for (const auto& id : subset) y.push_back(truth_of.at(id));
    return y;
  };
  const std::vector<double> y_train = targets(train_ids);

  std::vector<LabeledSeries> labeled;

  {
    LabeledSeries dummy;
    dummy.method = learn::family_display(learn::Family::dummy);
    dummy.features = "None";
    dummy.is_dummy = true;
    dummy.series.name = "dummy";
    const learn::TrainedModel model = learn::train_dummy(y_train);
    const linalg::Matrix empty_features(test_ids.size(), 1);
    const auto preds = learn::predict(model, empty_features);
    for (std::size_t i = 0; i < test_ids.size(); ++i) {
      dummy.series.estimates[test_ids[i]] = preds[i];
    }
    labeled.push_back(std::move(dummy));
  }

  const learn::Family families[] = {learn::Family::linear, learn::Family::random_forest,
                                    learn::Family::svr};
  const features::FeatureMode modes[] = {features::FeatureMode::uncertainty,
                                         features::FeatureMode::tfidf,
                                         features::FeatureMode::both};
  for (learn::Family family : families) {
    for (features::FeatureMode mode : modes) {
      const auto& full = design.at(mode);
      const features::FeatureMatrix X_train = features::select_rows(full, train_ids);
      const features::FeatureMatrix X_test = features::select_rows(full, test_ids);
      learn::GridSpec grid = learn::default_grid(
          family, X_train.values.cols,
          derive_seed(config.seed, learn::family_name(family) + ":" +
                                       features::feature_mode_name(mode)));
      const learn::GridResult result =
          learn::grid_search(family, grid, X_train.values, y_train, config.mode);
      const auto preds = learn::predict(result.refit, X_test.values);

      LabeledSeries entry;
      entry.method = learn::family_display(family);
      entry.features = features::feature_mode_display(mode);
      entry.series.name =
          learn::family_name(family) + ":" + features::feature_mode_name(mode);
      for (std::size_t i = 0; i < test_ids.size(); ++i) {
        entry.series.estimates[test_ids[i]] = preds[i];
      }
      labeled.push_back(std::move(entry));
    }
  }

  BenchmarkReport report;
  report.train_ids = train_ids;
  report.test_ids = test_ids;
  std::vector<eval::EstimateSeries> all_series;
  for (const auto& entry : labeled) {
    eval::ReportRow row;
    row.method = entry.method;
    row.features = entry.features;
    row.is_dummy = entry.is_dummy;
    row.metrics = eval::evaluate(entry.series, truths);
    report.rows.push_back(std::move(row));
    all_series.push_back(entry.series);
  }

  std::map<std::string, std::string> split_labels;
  for (const auto& id : train_ids) split_labels[id] = "train";
  for (const auto& id : test_ids) split_labels[id] = "test";
  report.per_question = eval::per_question_table(truths, all_series, split_labels);
  return report;
}

}  // namespace diffest::simbench
