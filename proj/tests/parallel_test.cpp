#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "diffest/features.hpp"
#include "diffest/learn.hpp"
#include "diffest/rng.hpp"
#include "diffest/simbench.hpp"
#include "test_util.hpp"

// The OpenMP kernels must reproduce the serial reference bit for bit: every
// iteration owns its output slot and derives its own random stream.

using namespace diffest;

TEST_CASE("parallel_for covers every index exactly once") {
  std::vector<int> hits(1000, 0);
  parallel_for(hits.size(), ExecMode::parallel, 8, [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) CHECK(h == 1);
  parallel_for(0, ExecMode::parallel, [&](std::size_t) { CHECK(false); });
}

TEST_CASE("simulate_bank: serial and parallel banks are identical") {
  simbench::CohortModel cohort{300, 0.0, 1.0, 19};
  const auto serial = simbench::simulate_bank(60, cohort, 0.0, 1.4, 3, ExecMode::serial);
  const auto parallel = simbench::simulate_bank(60, cohort, 0.0, 1.4, 3, ExecMode::parallel);
  CHECK(serial.difficulties == parallel.difficulties);
  REQUIRE(serial.bank.items.size() == parallel.bank.items.size());
  for (std::size_t i = 0; i < serial.bank.items.size(); ++i) {
    CHECK(serial.bank.items[i].text == parallel.bank.items[i].text);
    CHECK(serial.bank.items[i].correct_answer == parallel.bank.items[i].correct_answer);
    CHECK(serial.bank.results[i].correct_count == parallel.bank.results[i].correct_count);
  }
}

TEST_CASE("train_rf: serial and parallel forests are identical") {
  Rng rng(8);
  linalg::Matrix X(80, 6);
  std::vector<double> y(80);
  for (auto& v : X.data) v = rng.uniform();
  for (auto& v : y) v = rng.uniform();
  learn::RfConfig config;
  config.trees = 64;
  config.seed = 21;
  config.mode = ExecMode::serial;
  const auto serial = learn::train_rf(X, y, config);
  config.mode = ExecMode::parallel;
  const auto parallel = learn::train_rf(X, y, config);
  REQUIRE(serial.rf.trees.size() == parallel.rf.trees.size());
  for (std::size_t t = 0; t < serial.rf.trees.size(); ++t) {
    const auto& a = serial.rf.trees[t].nodes;
    const auto& b = parallel.rf.trees[t].nodes;
    REQUIRE(a.size() == b.size());
    for (std::size_t n = 0; n < a.size(); ++n) {
      CHECK(a[n].feature == b[n].feature);
      CHECK(a[n].threshold == b[n].threshold);
      CHECK(a[n].value == b[n].value);
    }
  }
  CHECK(learn::predict(serial, X) == learn::predict(parallel, X));
}

TEST_CASE("grid_search: serial and parallel tables are identical") {
  Rng rng(14);
  linalg::Matrix X(45, 4);
  std::vector<double> y(45);
  for (auto& v : X.data) v = rng.uniform();
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = 0.4 + 0.3 * std::sin(4.0 * X.at(i, 1));
  }
  for (learn::Family family : {learn::Family::svr, learn::Family::random_forest}) {
    const auto grid = learn::default_grid(family, X.cols, 17);
    const auto serial = learn::grid_search(family, grid, X, y, ExecMode::serial);
    const auto parallel = learn::grid_search(family, grid, X, y, ExecMode::parallel);
    CHECK(serial.best == parallel.best);
    REQUIRE(serial.table.size() == parallel.table.size());
    for (std::size_t i = 0; i < serial.table.size(); ++i) {
      CHECK(serial.table[i].mean_rmse == parallel.table[i].mean_rmse);
      CHECK(serial.table[i].fold_rmse == parallel.table[i].fold_rmse);
    }
    CHECK(learn::predict(serial.refit, X) == learn::predict(parallel.refit, X));
  }
}

TEST_CASE("transform_tfidf: serial and parallel matrices are identical") {
  Rng rng(25);
  std::vector<std::string> docs, ids;
  for (int d = 0; d < 200; ++d) {
    std::string doc;
    for (int w = 0; w < 12; ++w) doc += " w" + std::to_string(rng.below(70));
    docs.push_back(doc);
    ids.push_back("d" + std::to_string(d));
  }
  const auto model = features::fit_tfidf(docs);
  const auto serial = features::transform_tfidf(model, docs, ids, ExecMode::serial);
  const auto parallel = features::transform_tfidf(model, docs, ids, ExecMode::parallel);
  CHECK(serial.values.data == parallel.values.data);
}

TEST_CASE("probe_bank: signals agree across execution modes") {
  simbench::CohortModel cohort{40, 0.0, 1.0, 6};
  const auto sim = simbench::simulate_bank(25, cohort, 0.0, 1.2, 9);
  const auto config = simbench::default_benchmark_config(9);
  const std::string fixture = simbench::mock_solver_fixture_json(sim, config.ensemble);
  std::vector<probe::SolverSpec> ensemble;
  for (const auto& m : config.ensemble) {
    probe::SolverSpec spec;
    spec.name = m.name;
    spec.endpoint_url = "mock://";
    spec.model_id = m.name;
    ensemble.push_back(spec);
  }
  auto run = [&](ExecMode mode) {
    auto backend = probe::MockBackend::from_json_text(fixture);
    probe::CacheStore cache;
    probe::ProbeOptions options;
    options.mode = mode;
    const auto result = probe::probe_bank(sim.bank, ensemble, backend, cache, options);
    REQUIRE(result.failures.empty());
    return probe::signals_to_csv(result.signals);
  };
  CHECK(run(ExecMode::serial) == run(ExecMode::parallel));
}
