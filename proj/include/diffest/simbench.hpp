#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "diffest/corpus.hpp"
#include "diffest/eval.hpp"
#include "diffest/learn.hpp"
#include "diffest/parallel.hpp"
#include "diffest/probe.hpp"

namespace diffest::simbench {

// Student abilities are Normal(ability_mean, ability_std); each student
// answers correctly with probability sigmoid(theta - b).
struct CohortModel {
  int n_students = 100;
  double ability_mean = 0.0;
  double ability_std = 1.0;
  std::uint64_t seed = 42;
};

struct SimulatedBank {
  corpus::QuestionBank bank;
  std::vector<double> difficulties;  // b per question, bank item order
};

SimulatedBank simulate_bank(int n_questions, const CohortModel& cohort, double difficulty_mean,
                            double difficulty_std, std::uint64_t seed,
                            ExecMode mode = ExecMode::serial);

// Same simulation with caller-chosen difficulties. Student-level draws are
// keyed by (seed, question index), so bumping one b reuses the same random
// numbers.
SimulatedBank simulate_bank_with_difficulties(const std::vector<double>& difficulties,
                                              const CohortModel& cohort, std::uint64_t seed,
                                              ExecMode mode = ExecMode::serial);

// A synthetic solver: answers correctly with probability
// sigmoid(skill_theta - b + noise), noise drawn once per question.
struct MockSolverModel {
  std::string name;
  double skill_theta = 0.0;
  double noise_std = 0.0;
  std::uint64_t seed = 42;
};

// Probe-module mock fixture JSON for the given ensemble. The drawn letter
// carries log-probability ln(max(q, 1-q)), so extracted signals correlate
// with the underlying difficulty by construction.
std::string mock_solver_fixture_json(const SimulatedBank& sim,
                                     const std::vector<MockSolverModel>& ensemble);

double sigmoid(double x);

struct BenchmarkConfig {
  int n_questions = 120;
  CohortModel cohort;
  double difficulty_mean = 0.0;
  double difficulty_std = 1.4;
  std::vector<MockSolverModel> ensemble;
  learn::SplitSpec split;
  std::uint64_t seed = 42;
  ExecMode mode = ExecMode::parallel;
};

// Nine mock solvers with spread skills, question/student counts near the
// real exam scale.
BenchmarkConfig default_benchmark_config(std::uint64_t seed = 42);

struct BenchmarkReport {
  std::vector<eval::ReportRow> rows;  // dummy + 3 families x 3 feature modes
  eval::PerQuestionTable per_question;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

// simulate -> probe(mock) -> features -> split -> grid search -> train ->
// evaluate, on the held-out questions.
BenchmarkReport benchmark_run(const BenchmarkConfig& config);

}  // namespace diffest::simbench
