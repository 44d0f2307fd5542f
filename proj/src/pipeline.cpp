#include "diffest/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "diffest/csv.hpp"
#include "diffest/rng.hpp"

namespace diffest::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

std::string RunConfig::effective_cache_dir() const {
  return cache_dir.empty() ? (fs::path(out_dir) / "cache").string() : cache_dir;
}

ExecMode RunConfig::exec_mode() const {
  return parallelism <= 1 ? ExecMode::serial : ExecMode::parallel;
}

namespace {

probe::SolverSpec parse_solver(const json& doc, const std::string& field) {
  probe::SolverSpec spec;
  try {
    spec.name = doc.at("name").get<std::string>();
    spec.endpoint_url = doc.at("endpoint_url").get<std::string>();
    spec.model_id = doc.at("model_id").get<std::string>();
    spec.temperature = doc.value("temperature", 0.0);
    spec.max_tokens = doc.value("max_tokens", 16);
    spec.request_timeout = std::chrono::milliseconds(doc.value("timeout_ms", 30000));
  } catch (const json::exception& e) {
    throw ConfigError(field + ": invalid solver spec: " + e.what());
  }
  if (spec.name.empty()) throw ConfigError(field + ": solver name must be non-empty");
  return spec;
}

}  // namespace

RunConfig load_config(const std::string& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const Error& e) {
    throw ConfigError(e.what());
  } catch (const json::exception& e) {
    throw ConfigError(path + ": malformed JSON: " + e.what());
  }

  RunConfig config;
  if (!doc.contains("seed") || !doc["seed"].is_number_integer()) {
    throw ConfigError(path + ": field 'seed' is required and must be an integer");
  }
  config.seed = doc["seed"].get<std::uint64_t>();
  if (!doc.contains("bank") || !doc["bank"].is_string()) {
    throw ConfigError(path + ": field 'bank' is required and must be a path string");
  }
  config.bank_path = doc["bank"].get<std::string>();
  config.out_dir = doc.value("out_dir", std::string("out"));
  config.cache_dir = doc.value("cache_dir", std::string());
  config.parallelism = doc.value("parallelism", 4);
  if (config.parallelism < 1) {
    throw ConfigError(path + ": field 'parallelism' must be >= 1");
  }
  config.mock_fixture = doc.value("mock_fixture", std::string());

  if (doc.contains("solvers")) {
    if (!doc["solvers"].is_array()) throw ConfigError(path + ": 'solvers' must be an array");
    std::set<std::string> names;
    for (std::size_t i = 0; i < doc["solvers"].size(); ++i) {
      auto spec = parse_solver(doc["solvers"][i], "solvers[" + std::to_string(i) + "]");
      if (!names.insert(spec.name).second) {
        throw ConfigError(path + ": duplicate solver name '" + spec.name + "'");
      }
      config.solvers.push_back(std::move(spec));
    }
  }

  if (doc.contains("direct")) {
    const json& d = doc["direct"];
    DirectSettings settings;
    if (!d.contains("solver")) throw ConfigError(path + ": 'direct.solver' is required");
    settings.solver = parse_solver(d["solver"], "direct.solver");
    try {
      settings.mode = direct::mode_from_name(d.value("mode", "single_question"));
    } catch (const Error& e) {
      throw ConfigError(path + ": field 'direct.mode': " + e.what());
    }
    settings.include_cot = d.value("include_cot", true);
    settings.calibration_question = d.value("calibration_question", std::string());
    config.direct_settings = std::move(settings);
  }

  const std::vector<std::string> default_features = {"uncertainty", "tfidf", "both"};
  for (std::size_t i = 0; i < doc.value("features", default_features).size(); ++i) {
    const std::string name = doc.value("features", default_features)[i];
    try {
      config.feature_modes.push_back(features::feature_mode_from_name(name));
    } catch (const Error& e) {
      throw ConfigError(path + ": field 'features[" + std::to_string(i) + "]': " + e.what());
    }
  }

  const std::vector<std::string> default_families = {"dummy", "linear", "svr", "random_forest"};
  for (std::size_t i = 0; i < doc.value("families", default_families).size(); ++i) {
    const std::string name = doc.value("families", default_families)[i];
    try {
      config.families.push_back(learn::family_from_name(name));
    } catch (const Error& e) {
      throw ConfigError(path + ": field 'families[" + std::to_string(i) + "]': " + e.what());
    }
  }

  if (doc.contains("split")) {
    config.split.train_fraction = doc["split"].value("train_fraction", 0.8);
    config.split.seed = doc["split"].value("seed", config.seed);
    if (config.split.train_fraction <= 0.0 || config.split.train_fraction >= 1.0) {
      throw ConfigError(path + ": 'split.train_fraction' must lie strictly between 0 and 1");
    }
  } else {
    config.split.seed = config.seed;
  }

  if (doc.contains("estimators")) {
    for (const auto& e : doc["estimators"]) {
      ExternalEstimator est;
      est.name = e.at("name").get<std::string>();
      est.path = e.at("path").get<std::string>();
      config.estimators.push_back(std::move(est));
    }
  }

  if (doc.contains("simulate")) {
    const json& s = doc["simulate"];
    SimulateSettings sim;
    sim.n_questions = s.value("n_questions", 120);
    sim.n_students = s.value("n_students", 100);
    sim.ability_mean = s.value("ability_mean", 0.0);
    sim.ability_std = s.value("ability_std", 1.0);
    sim.difficulty_mean = s.value("difficulty_mean", 0.0);
    sim.difficulty_std = s.value("difficulty_std", 1.4);
    if (sim.n_questions < 1 || sim.n_students < 1) {
      throw ConfigError(path + ": 'simulate' counts must be positive");
    }
    config.simulate = sim;
    // Simulated artifacts default into the output directory.
    if (config.bank_path.empty()) config.bank_path = (fs::path(config.out_dir) / "bank.jsonl").string();
    if (config.mock_fixture.empty()) {
      config.mock_fixture = (fs::path(config.out_dir) / "mock_fixture.json").string();
    }
  }
  return config;
}

std::vector<std::string> check_paths(const RunConfig& config) {
  std::vector<std::string> problems;
  // Simulated inputs are produced by the simulate stage, not required up front.
  if (!config.simulate && !fs::exists(config.bank_path)) {
    problems.push_back("bank file does not exist: " + config.bank_path);
  }
  if (!config.simulate && !config.mock_fixture.empty() && !fs::exists(config.mock_fixture)) {
    problems.push_back("mock fixture does not exist: " + config.mock_fixture);
  }
  for (const auto& est : config.estimators) {
    if (!fs::exists(est.path)) {
      problems.push_back("estimator file does not exist: " + est.path + " (" + est.name + ")");
    }
  }
  return problems;
}

namespace {

json resolved_json(const RunConfig& config) {
  json doc;
  doc["bank"] = config.bank_path;
  doc["out_dir"] = config.out_dir;
  doc["cache_dir"] = config.effective_cache_dir();
  doc["seed"] = config.seed;
  doc["parallelism"] = config.parallelism;
  doc["mock_fixture"] = config.mock_fixture;
  json solvers = json::array();
  for (const auto& s : config.solvers) {
    solvers.push_back({{"name", s.name},
                       {"endpoint_url", s.endpoint_url},
                       {"model_id", s.model_id},
                       {"temperature", s.temperature},
                       {"max_tokens", s.max_tokens},
                       {"timeout_ms", s.request_timeout.count()}});
  }
  doc["solvers"] = std::move(solvers);
  if (config.direct_settings) {
    doc["direct"] = {{"solver", config.direct_settings->solver.name},
                     {"mode", direct::mode_name(config.direct_settings->mode)},
                     {"include_cot", config.direct_settings->include_cot},
                     {"calibration_question", config.direct_settings->calibration_question}};
  }
  json feats = json::array();
  for (auto m : config.feature_modes) feats.push_back(features::feature_mode_name(m));
  doc["features"] = std::move(feats);
  json fams = json::array();
  for (auto f : config.families) fams.push_back(learn::family_name(f));
  doc["families"] = std::move(fams);
  doc["split"] = {{"train_fraction", config.split.train_fraction}, {"seed", config.split.seed}};
  json ests = json::array();
  for (const auto& e : config.estimators) ests.push_back({{"name", e.name}, {"path", e.path}});
  doc["estimators"] = std::move(ests);
  if (config.simulate) {
    doc["simulate"] = {{"n_questions", config.simulate->n_questions},
                       {"n_students", config.simulate->n_students},
                       {"ability_mean", config.simulate->ability_mean},
                       {"ability_std", config.simulate->ability_std},
                       {"difficulty_mean", config.simulate->difficulty_mean},
                       {"difficulty_std", config.simulate->difficulty_std}};
  }
  return doc;
}

}  // namespace

std::string resolved_summary(const RunConfig& config) {
  return resolved_json(config).dump(2) + "\n";
}

std::string config_hash(const RunConfig& config) {
  return hex64(fnv1a64(resolved_json(config).dump()));
}

namespace {

fs::path manifest_path(const RunConfig& config, const std::string& stage) {
  return fs::path(config.out_dir) / "manifests" / (stage + ".json");
}

std::string file_hash(const std::string& path) { return hex64(fnv1a64(read_file(path))); }

bool manifest_up_to_date(const RunConfig& config, const std::string& stage,
                         const std::vector<std::string>& inputs) {
  const fs::path mpath = manifest_path(config, stage);
  if (!fs::exists(mpath)) return false;
  json doc;
  try {
    doc = json::parse(read_file(mpath.string()));
  } catch (...) {
    return false;
  }
  if (doc.value("config_hash", "") != config_hash(config)) return false;
  if (doc.value("seed", std::uint64_t(0)) != config.seed) return false;
  std::map<std::string, std::string> recorded;
  if (doc.contains("inputs")) {
    for (auto it = doc["inputs"].begin(); it != doc["inputs"].end(); ++it) {
      recorded[it.key()] = it.value().get<std::string>();
    }
  }
  std::set<std::string> expected(inputs.begin(), inputs.end());
  if (recorded.size() != expected.size()) return false;
  for (const auto& path : expected) {
    auto it = recorded.find(path);
    if (it == recorded.end()) return false;
    if (!fs::exists(path) || file_hash(path) != it->second) return false;
  }
  if (doc.contains("outputs")) {
    for (const auto& out : doc["outputs"]) {
      if (!fs::exists(out.get<std::string>())) return false;
    }
  }
  return true;
}

void write_manifest(const RunConfig& config, const std::string& stage,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
  json doc;
  doc["stage"] = stage;
  doc["config_hash"] = config_hash(config);
  doc["seed"] = config.seed;
  json in = json::object();
  for (const auto& path : inputs) in[path] = file_hash(path);
  doc["inputs"] = std::move(in);
  doc["outputs"] = outputs;
  fs::create_directories(manifest_path(config, stage).parent_path());
  write_file(manifest_path(config, stage).string(), doc.dump(2) + "\n");
}

fs::path out_path(const RunConfig& config, const std::string& name) {
  return fs::path(config.out_dir) / name;
}

corpus::QuestionBank load_bank_checked(const RunConfig& config) {
  if (!fs::exists(config.bank_path)) {
    throw Error("bank file missing: " + config.bank_path +
                (config.simulate ? " (run `simulate` first)" : ""));
  }
  return corpus::load_bank(config.bank_path);
}

std::unique_ptr<probe::SolverBackend> make_backend(const RunConfig& config) {
  if (!config.mock_fixture.empty()) {
    if (!fs::exists(config.mock_fixture)) {
      throw Error("mock fixture missing: " + config.mock_fixture +
                  (config.simulate ? " (run `simulate` first)" : ""));
    }
    return std::make_unique<probe::MockBackend>(
        probe::MockBackend::from_json_file(config.mock_fixture));
  }
  return std::make_unique<probe::HttpBackend>();
}

bool uses_uncertainty(const RunConfig& config) {
  return std::any_of(config.feature_modes.begin(), config.feature_modes.end(),
                     [](features::FeatureMode m) {
                       return m == features::FeatureMode::uncertainty ||
                              m == features::FeatureMode::both;
                     });
}

bool uses_tfidf(const RunConfig& config) {
  return std::any_of(config.feature_modes.begin(), config.feature_modes.end(),
                     [](features::FeatureMode m) {
                       return m == features::FeatureMode::tfidf ||
                              m == features::FeatureMode::both;
                     });
}

std::string prediction_name(learn::Family family, features::FeatureMode mode) {
  if (family == learn::Family::dummy) return "dummy";
  return learn::family_name(family) + "_" + features::feature_mode_name(mode);
}

}  // namespace

StageResult stage_simulate(const RunConfig& config) {
  if (!config.simulate) throw ConfigError("simulate: config has no 'simulate' section");
  StageResult result;
  result.outputs = {config.bank_path, config.mock_fixture,
                    out_path(config, "true_difficulties.csv").string()};
  if (manifest_up_to_date(config, "simulate", {})) {
    result.skipped = true;
    return result;
  }
  fs::create_directories(config.out_dir);
  fs::create_directories(fs::path(config.bank_path).parent_path());

  const auto& s = *config.simulate;
  simbench::CohortModel cohort{s.n_students, s.ability_mean, s.ability_std,
                               derive_seed(config.seed, "cohort")};
  const simbench::SimulatedBank sim =
      simbench::simulate_bank(s.n_questions, cohort, s.difficulty_mean, s.difficulty_std,
                              config.seed, config.exec_mode());
  corpus::save_bank(sim.bank, config.bank_path);

  std::vector<simbench::MockSolverModel> ensemble;
  if (config.solvers.empty()) {
    ensemble = simbench::default_benchmark_config(config.seed).ensemble;
  } else {
    // Skill ladder across the configured ensemble, weaker to stronger.
    for (std::size_t i = 0; i < config.solvers.size(); ++i) {
      simbench::MockSolverModel m;
      m.name = config.solvers[i].name;
      m.skill_theta = -0.8 + 3.2 * static_cast<double>(i) /
                                 static_cast<double>(std::max<std::size_t>(
                                     1, config.solvers.size() - 1));
      m.noise_std = 0.5;
      m.seed = derive_seed(config.seed, m.name);
      ensemble.push_back(std::move(m));
    }
  }
  write_file(config.mock_fixture, simbench::mock_solver_fixture_json(sim, ensemble));

  csv::Table difficulties;
  difficulties.header = {"question_id", "difficulty_b"};
  for (std::size_t q = 0; q < sim.bank.items.size(); ++q) {
    difficulties.rows.push_back({sim.bank.items[q].id, format_double(sim.difficulties[q])});
  }
  csv::write_file(out_path(config, "true_difficulties.csv").string(), difficulties);

  write_manifest(config, "simulate", {}, result.outputs);
  return result;
}

StageResult stage_probe(const RunConfig& config) {
  StageResult result;
  const std::string signals_path = out_path(config, "signals.csv").string();
  result.outputs = {signals_path};
  std::vector<std::string> inputs = {config.bank_path};
  if (!config.mock_fixture.empty()) inputs.push_back(config.mock_fixture);
  if (manifest_up_to_date(config, "probe", inputs)) {
    result.skipped = true;
    return result;
  }
  if (config.solvers.empty() && config.mock_fixture.empty()) {
    throw ConfigError("probe: no solvers configured");
  }
  fs::create_directories(config.out_dir);

  const corpus::QuestionBank bank = load_bank_checked(config);
  auto backend = make_backend(config);
  std::vector<probe::SolverSpec> ensemble = config.solvers;
  if (ensemble.empty()) {
    // Mock fixtures carry their own solver names; mirror the default bench.
    for (const auto& m : simbench::default_benchmark_config(config.seed).ensemble) {
      probe::SolverSpec spec;
      spec.name = m.name;
      spec.endpoint_url = "mock://";
      spec.model_id = m.name;
      ensemble.push_back(std::move(spec));
    }
  }

  probe::CacheStore cache(config.effective_cache_dir());
  probe::ProbeOptions options;
  options.parallelism = config.parallelism;
  options.mode = config.exec_mode();
  options.seed = config.seed;
  options.retry.seed = config.seed;
  const probe::ProbeResult probed = probe::probe_bank(bank, ensemble, *backend, cache, options);
  for (const auto& f : probed.failures) {
    result.notes.push_back("probe failure (" + f.solver_name + ", " + f.question_id + "): " +
                           f.message);
  }
  write_file(signals_path, probe::signals_to_csv(probed.signals));
  write_manifest(config, "probe", inputs, result.outputs);
  return result;
}

StageResult stage_direct(const RunConfig& config) {
  if (!config.direct_settings) throw ConfigError("direct: config has no 'direct' section");
  StageResult result;
  const auto& settings = *config.direct_settings;
  const std::string estimates_path =
      out_path(config, "direct_" + direct::mode_name(settings.mode) + ".csv").string();
  const std::string log_path = out_path(config, "direct_responses.jsonl").string();
  result.outputs = {estimates_path, log_path};
  std::vector<std::string> inputs = {config.bank_path};
  if (!config.mock_fixture.empty()) inputs.push_back(config.mock_fixture);
  if (manifest_up_to_date(config, "direct", inputs)) {
    result.skipped = true;
    return result;
  }
  fs::create_directories(config.out_dir);

  const corpus::QuestionBank bank = load_bank_checked(config);
  auto backend = make_backend(config);

  direct::DirectConfig dconfig;
  dconfig.solver = settings.solver;
  dconfig.mode = settings.mode;
  dconfig.include_cot = settings.include_cot;
  if (!settings.calibration_question.empty()) {
    const corpus::QuestionItem* item = bank.find(settings.calibration_question);
    if (!item) {
      throw ConfigError("direct.calibration_question: unknown item '" +
                        settings.calibration_question + "'");
    }
    for (const auto& gt : corpus::compute_ground_truth(bank)) {
      if (gt.question_id == item->id) {
        dconfig.calibration = direct::CalibrationExample{*item, gt.p_plus};
        break;
      }
    }
    if (!dconfig.calibration) {
      throw ConfigError("direct.calibration_question: no ground truth for '" + item->id + "'");
    }
  }

  direct::ResponseLog log(log_path);
  direct::DirectOptions options;
  options.parallelism = config.parallelism;
  options.mode = config.exec_mode();
  options.retry.seed = config.seed;
  const direct::DirectRun run = direct::run_direct(dconfig, bank, *backend, log, options);
  for (const auto& f : run.failures) {
    result.notes.push_back("direct failure (" + f.question_id + "): " + f.message);
  }
  eval::EstimateSeries series;
  series.name = "direct_" + direct::mode_name(settings.mode);
  for (const auto& est : run.estimates) series.estimates[est.question_id] = est.estimate;
  eval::save_estimator_csv(series, estimates_path);
  write_manifest(config, "direct", inputs, result.outputs);
  return result;
}

StageResult stage_train(const RunConfig& config) {
  StageResult result;
  const std::string signals_path = out_path(config, "signals.csv").string();
  const std::string split_path = out_path(config, "split.json").string();

  std::vector<std::string> inputs = {config.bank_path};
  if (uses_uncertainty(config)) {
    if (!fs::exists(signals_path)) {
      throw Error("train: uncertainty features need " + signals_path + "; run `probe` first");
    }
    inputs.push_back(signals_path);
  }

  std::vector<std::string> outputs = {split_path};
  for (learn::Family family : config.families) {
    if (family == learn::Family::dummy) {
      outputs.push_back(out_path(config, "models/dummy.json").string());
      outputs.push_back(out_path(config, "predictions/dummy.csv").string());
      continue;
    }
    for (features::FeatureMode mode : config.feature_modes) {
      const std::string stem = prediction_name(family, mode);
      outputs.push_back(out_path(config, "models/" + stem + ".json").string());
      outputs.push_back(out_path(config, "predictions/" + stem + ".csv").string());
    }
  }
  result.outputs = outputs;
  if (manifest_up_to_date(config, "train", inputs)) {
    result.skipped = true;
    return result;
  }
  fs::create_directories(out_path(config, "models"));
  fs::create_directories(out_path(config, "predictions"));

  const corpus::QuestionBank bank = load_bank_checked(config);
  const auto truths = corpus::compute_ground_truth(bank);
  std::map<std::string, double> truth_of;
  for (const auto& gt : truths) truth_of[gt.question_id] = gt.p_plus;

  std::vector<std::string> ids;
  std::map<std::string, std::string> text_of;
  for (const auto& item : corpus::active_items(bank)) {
    ids.push_back(item.id);
    text_of[item.id] = item.text;
  }
  auto [train_ids, test_ids] = learn::split(ids, config.split);
  {
    json split_doc;
    split_doc["train"] = train_ids;
    split_doc["test"] = test_ids;
    split_doc["train_fraction"] = config.split.train_fraction;
    split_doc["seed"] = config.split.seed;
    write_file(split_path, split_doc.dump(2) + "\n");
  }

  std::optional<features::FeatureMatrix> tfidf_all;
  if (uses_tfidf(config)) {
    std::vector<std::string> train_texts;
    for (const auto& id : train_ids) train_texts.push_back(text_of[id]);
    const features::TfidfModel tfidf_model = features::fit_tfidf(train_texts);
    std::vector<std::string> all_texts;
    for (const auto& id : ids) all_texts.push_back(text_of[id]);
    tfidf_all = features::transform_tfidf(tfidf_model, all_texts, ids, config.exec_mode());
  }
  std::vector<probe::UncertaintySignals> signals;
  if (uses_uncertainty(config)) signals = probe::signals_from_csv_file(signals_path);

  auto targets = [&](const std::vector<std::string>& subset) {
    std::vector<double> y;
    for (const auto& id : subset) {
      auto it = truth_of.find(id);
      if (it == truth_of.end()) throw Error("train: no ground truth for '" + id + "'");
      y.push_back(it->second);
    }
    return y;
  };
  const std::vector<double> y_train = targets(train_ids);

  auto save_predictions = [&](const std::string& stem, const std::vector<double>& preds) {
    eval::EstimateSeries series;
    series.name = stem;
    for (std::size_t i = 0; i < test_ids.size(); ++i) series.estimates[test_ids[i]] = preds[i];
    eval::save_estimator_csv(series, out_path(config, "predictions/" + stem + ".csv").string());
  };

  for (learn::Family family : config.families) {
    if (family == learn::Family::dummy) {
      learn::TrainedModel model = learn::train_dummy(y_train);
      learn::save_model_json(model, out_path(config, "models/dummy.json").string());
      save_predictions("dummy", learn::predict(model, linalg::Matrix(test_ids.size(), 1)));
      continue;
    }
    for (features::FeatureMode mode : config.feature_modes) {
      const features::FeatureMatrix design =
          features::assemble(mode, signals, tfidf_all, ids);
      const features::FeatureMatrix X_train = features::select_rows(design, train_ids);
      const features::FeatureMatrix X_test = features::select_rows(design, test_ids);
      learn::GridSpec grid = learn::default_grid(
          family, X_train.values.cols,
          derive_seed(config.seed,
                      learn::family_name(family) + ":" + features::feature_mode_name(mode)));
      learn::GridResult tuned =
          learn::grid_search(family, grid, X_train.values, y_train, config.exec_mode());
      tuned.refit.feature_names = design.column_names;
      const std::string stem = prediction_name(family, mode);
      learn::save_model_json(tuned.refit, out_path(config, "models/" + stem + ".json").string());
      learn::validate_feature_names(tuned.refit, X_test.column_names);
      save_predictions(stem, learn::predict(tuned.refit, X_test.values));
    }
  }

  write_manifest(config, "train", inputs, result.outputs);
  return result;
}

StageResult stage_evaluate(const RunConfig& config) {
  StageResult result;
  const std::string evaluation_path = out_path(config, "evaluation.json").string();
  result.outputs = {evaluation_path};

  std::vector<std::string> inputs = {config.bank_path};
  for (const auto& est : config.estimators) inputs.push_back(est.path);
  const std::string split_path = out_path(config, "split.json").string();
  if (fs::exists(split_path)) inputs.push_back(split_path);
  std::vector<std::pair<std::string, std::string>> prediction_files;  // stem, path
  for (learn::Family family : config.families) {
    if (family == learn::Family::dummy) {
      const std::string p = out_path(config, "predictions/dummy.csv").string();
      if (fs::exists(p)) prediction_files.emplace_back("dummy", p);
      continue;
    }
    for (features::FeatureMode mode : config.feature_modes) {
      const std::string stem = prediction_name(family, mode);
      const std::string p = out_path(config, "predictions/" + stem + ".csv").string();
      if (fs::exists(p)) prediction_files.emplace_back(stem, p);
    }
  }
  for (const auto& [stem, p] : prediction_files) inputs.push_back(p);
  std::vector<std::pair<std::string, std::string>> direct_files;  // mode, path
  for (const char* mode : {"single_question", "all_questions"}) {
    const std::string p = out_path(config, std::string("direct_") + mode + ".csv").string();
    if (fs::exists(p)) direct_files.emplace_back(mode, p);
  }
  for (const auto& [mode, p] : direct_files) inputs.push_back(p);

  if (config.estimators.empty() && prediction_files.empty() && direct_files.empty()) {
    throw Error("evaluate: nothing to evaluate; run `train` or `direct`, or configure "
                "external estimators");
  }
  if (manifest_up_to_date(config, "evaluate", inputs)) {
    result.skipped = true;
    return result;
  }
  fs::create_directories(config.out_dir);

  const corpus::QuestionBank bank = load_bank_checked(config);
  const auto truths = corpus::compute_ground_truth(bank);

  std::map<std::string, std::string> split_labels;
  if (fs::exists(split_path)) {
    const json split_doc = json::parse(read_file(split_path));
    for (const auto& id : split_doc.at("train")) split_labels[id.get<std::string>()] = "train";
    for (const auto& id : split_doc.at("test")) split_labels[id.get<std::string>()] = "test";
  }

  struct Entry {
    std::string method;
    std::string features;
    bool is_dummy = false;
    bool annotator_style = false;  // participates in the agreement matrix
    eval::EstimateSeries series;
  };
  std::vector<Entry> entries;

  for (const auto& est : config.estimators) {
    Entry e;
    e.method = est.name;
    e.annotator_style = true;
    e.series = eval::load_estimator_csv(est.path, est.name);
    entries.push_back(std::move(e));
  }
  if (config.estimators.size() >= 2) {
    std::vector<eval::EstimateSeries> externals;
    for (const auto& e : entries) externals.push_back(e.series);
    Entry avg;
    avg.method = "Average of Estimates";
    avg.annotator_style = false;
    avg.series = eval::average_series(externals);
    avg.series.name = "average";
    entries.push_back(std::move(avg));
  }
  for (const auto& [mode, path] : direct_files) {
    Entry e;
    e.method = config.direct_settings ? "Direct (" + config.direct_settings->solver.name + ")"
                                      : "Direct";
    e.features = mode == std::string("single_question") ? "Single question" : "All questions";
    e.annotator_style = true;
    e.series = eval::load_estimator_csv(path, std::string("direct_") + mode);
    entries.push_back(std::move(e));
  }
  for (const auto& [stem, path] : prediction_files) {
    Entry e;
    if (stem == "dummy") {
      e.method = learn::family_display(learn::Family::dummy);
      e.features = "None";
      e.is_dummy = true;
    } else {
      const auto sep = stem.find('_');
      e.method = learn::family_display(learn::family_from_name(stem.substr(0, sep)));
      e.features =
          features::feature_mode_display(features::feature_mode_from_name(stem.substr(sep + 1)));
    }
    e.series = eval::load_estimator_csv(path, stem);
    entries.push_back(std::move(e));
  }

  json rows = json::array();
  std::vector<eval::EstimateSeries> all_series;
  std::vector<eval::EstimateSeries> annotator_series;
  for (const auto& e : entries) {
    const eval::EvaluationMetrics m = eval::evaluate(e.series, truths);
    json row;
    row["method"] = e.method;
    row["features"] = e.features;
    row["series"] = e.series.name;
    row["is_dummy"] = e.is_dummy;
    row["rmse"] = m.rmse;
    row["me"] = m.mean_error;
    if (m.spearman_rho) row["rho"] = *m.spearman_rho;
    else row["rho"] = nullptr;
    row["n"] = m.n_evaluated;
    rows.push_back(std::move(row));
    all_series.push_back(e.series);
    if (e.annotator_style) annotator_series.push_back(e.series);
  }

  json agreement = json::object();
  if (annotator_series.size() >= 2) {
    const eval::AgreementMatrix m = eval::agreement_matrix(annotator_series);
    agreement["names"] = m.names;
    json mat = json::array();
    for (std::size_t i = 0; i < m.names.size(); ++i) {
      json r = json::array();
      for (std::size_t j = 0; j < m.names.size(); ++j) {
        if (m.defined[i * m.names.size() + j]) r.push_back(m.rho.at(i, j));
        else r.push_back(nullptr);
      }
      mat.push_back(std::move(r));
    }
    agreement["rho"] = std::move(mat);
  }

  const eval::PerQuestionTable table = eval::per_question_table(truths, all_series, split_labels);
  json per_question;
  per_question["series"] = table.series_names;
  json prows = json::array();
  for (const auto& row : table.rows) {
    json r;
    r["id"] = row.question_id;
    r["p_plus"] = row.p_plus;
    r["split"] = row.split_label;
    json ests = json::array();
    for (const auto& est : row.estimates) {
      if (est) ests.push_back(*est);
      else ests.push_back(nullptr);
    }
    r["estimates"] = std::move(ests);
    prows.push_back(std::move(r));
  }
  per_question["rows"] = std::move(prows);

  json doc;
  doc["rows"] = std::move(rows);
  doc["agreement"] = std::move(agreement);
  doc["per_question"] = std::move(per_question);
  write_file(evaluation_path, doc.dump(2) + "\n");
  write_manifest(config, "evaluate", inputs, result.outputs);
  return result;
}

StageResult stage_report(const RunConfig& config, bool scatter_svg) {
  StageResult result;
  const std::string evaluation_path = out_path(config, "evaluation.json").string();
  if (!fs::exists(evaluation_path)) {
    throw Error("report: " + evaluation_path + " missing; run `evaluate` first");
  }
  const json doc = json::parse(read_file(evaluation_path));

  std::vector<eval::ReportRow> rows;
  for (const auto& r : doc.at("rows")) {
    eval::ReportRow row;
    row.method = r.at("method").get<std::string>();
    row.features = r.at("features").get<std::string>();
    row.is_dummy = r.at("is_dummy").get<bool>();
    row.metrics.rmse = r.at("rmse").get<double>();
    row.metrics.mean_error = r.at("me").get<double>();
    if (!r.at("rho").is_null()) row.metrics.spearman_rho = r.at("rho").get<double>();
    row.metrics.n_evaluated = r.at("n").get<std::size_t>();
    rows.push_back(std::move(row));
  }

  const std::string metrics_md = out_path(config, "metrics.md").string();
  const std::string metrics_csv = out_path(config, "metrics.csv").string();
  write_file(metrics_md, eval::render_metrics_markdown(rows, "Difficulty estimation report"));
  write_file(metrics_csv, eval::render_metrics_csv(rows));
  result.outputs = {metrics_md, metrics_csv};

  if (doc.at("agreement").contains("names")) {
    eval::AgreementMatrix m;
    m.names = doc["agreement"]["names"].get<std::vector<std::string>>();
    const std::size_t n = m.names.size();
    m.rho = linalg::Matrix(n, n);
    m.defined.assign(n * n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const auto& cell = doc["agreement"]["rho"][i][j];
        if (!cell.is_null()) {
          m.rho.at(i, j) = cell.get<double>();
          m.defined[i * n + j] = 1;
        }
      }
    }
    const std::string agreement_csv = out_path(config, "agreement.csv").string();
    write_file(agreement_csv, eval::render_agreement_csv(m));
    result.outputs.push_back(agreement_csv);
  }

  eval::PerQuestionTable table;
  table.series_names = doc["per_question"]["series"].get<std::vector<std::string>>();
  for (const auto& r : doc["per_question"]["rows"]) {
    eval::PerQuestionRow row;
    row.question_id = r.at("id").get<std::string>();
    row.p_plus = r.at("p_plus").get<double>();
    row.split_label = r.at("split").get<std::string>();
    for (const auto& est : r.at("estimates")) {
      if (est.is_null()) row.estimates.emplace_back(std::nullopt);
      else row.estimates.emplace_back(est.get<double>());
    }
    table.rows.push_back(std::move(row));
  }
  const std::string per_question_csv = out_path(config, "per_question.csv").string();
  write_file(per_question_csv, eval::render_per_question_csv(table));
  result.outputs.push_back(per_question_csv);

  if (scatter_svg) {
    for (std::size_t s = 0; s < table.series_names.size(); ++s) {
      std::vector<std::pair<double, double>> points;
      for (const auto& row : table.rows) {
        if (row.estimates[s]) points.emplace_back(row.p_plus, *row.estimates[s]);
      }
      std::string fname = "scatter_" + table.series_names[s] + ".svg";
      std::replace_if(fname.begin(), fname.end(),
                      [](char c) { return c == '/' || c == ' '; }, '_');
      const std::string path = out_path(config, fname).string();
      write_file(path, eval::render_scatter_svg(table.series_names[s], points));
      result.outputs.push_back(path);
    }
  }
  write_manifest(config, "report", {evaluation_path}, result.outputs);
  return result;
}

}  // namespace diffest::pipeline
