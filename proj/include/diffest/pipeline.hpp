#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "diffest/direct.hpp"
#include "diffest/features.hpp"
#include "diffest/learn.hpp"
#include "diffest/probe.hpp"
#include "diffest/simbench.hpp"

namespace diffest::pipeline {

struct DirectSettings {
  probe::SolverSpec solver;
  direct::Mode mode = direct::Mode::single_question;
  bool include_cot = true;
  std::string calibration_question;  // optional item id; its truth feeds the example
};

struct ExternalEstimator {
  std::string name;
  std::string path;
};

struct SimulateSettings {
  int n_questions = 120;
  int n_students = 100;
  double ability_mean = 0.0;
  double ability_std = 1.0;
  double difficulty_mean = 0.0;
  double difficulty_std = 1.4;
};

struct RunConfig {
  std::string bank_path;
  std::string out_dir = "out";
  std::string cache_dir;  // defaults to <out_dir>/cache
  std::uint64_t seed = 42;
  int parallelism = 4;
  std::vector<probe::SolverSpec> solvers;
  std::string mock_fixture;  // when set, the mock backend serves every solver
  std::optional<DirectSettings> direct_settings;
  std::vector<features::FeatureMode> feature_modes;
  std::vector<learn::Family> families;
  learn::SplitSpec split;
  std::vector<ExternalEstimator> estimators;
  std::optional<SimulateSettings> simulate;

  std::string effective_cache_dir() const;
  ExecMode exec_mode() const;
};

// Parses and schema-checks the config document. Path existence is checked
// separately so `validate` can report all problems at once.
RunConfig load_config(const std::string& path);

// Returns human-readable diagnostics; empty means the config is usable.
std::vector<std::string> check_paths(const RunConfig& config);

std::string resolved_summary(const RunConfig& config);

// Hash of the fully resolved configuration, used in stage manifests.
std::string config_hash(const RunConfig& config);

struct StageResult {
  bool skipped = false;  // manifest said up to date
  std::vector<std::string> outputs;
  std::vector<std::string> notes;  // per-pair/per-item failures worth surfacing
};

StageResult stage_simulate(const RunConfig& config);
StageResult stage_probe(const RunConfig& config);
StageResult stage_direct(const RunConfig& config);
StageResult stage_train(const RunConfig& config);
StageResult stage_evaluate(const RunConfig& config);
StageResult stage_report(const RunConfig& config, bool scatter_svg);

}  // namespace diffest::pipeline
