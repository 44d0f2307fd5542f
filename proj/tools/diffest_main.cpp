#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "diffest/pipeline.hpp"

namespace {

using diffest::pipeline::RunConfig;
using diffest::pipeline::StageResult;

struct GlobalFlags {
  std::string config_path;
  std::int64_t seed = -1;
  std::string out_dir;
  int parallelism = 0;
};

RunConfig load_with_overrides(const GlobalFlags& flags) {
  if (flags.config_path.empty()) {
    throw diffest::ConfigError("--config PATH is required");
  }
  RunConfig config = diffest::pipeline::load_config(flags.config_path);
  if (flags.seed >= 0) {
    config.seed = static_cast<std::uint64_t>(flags.seed);
    config.split.seed = config.seed;
  }
  if (!flags.out_dir.empty()) config.out_dir = flags.out_dir;
  if (flags.parallelism > 0) config.parallelism = flags.parallelism;
  diffest::exec_config().mode = config.exec_mode();
  diffest::exec_config().threads = config.parallelism;
  return config;
}

int report_stage(const std::string& name, const StageResult& result) {
  if (result.skipped) {
    std::printf("%s: up to date\n", name.c_str());
    return 0;
  }
  for (const auto& out : result.outputs) std::printf("%s: wrote %s\n", name.c_str(), out.c_str());
  int failures = 0;
  for (const auto& note : result.notes) {
    std::fprintf(stderr, "%s: %s\n", name.c_str(), note.c_str());
    ++failures;
  }
  return failures;
}

int cmd_validate(const GlobalFlags& flags) {
  const RunConfig config = load_with_overrides(flags);
  std::printf("%s", diffest::pipeline::resolved_summary(config).c_str());
  const auto problems = diffest::pipeline::check_paths(config);
  for (const auto& p : problems) std::fprintf(stderr, "error: %s\n", p.c_str());
  if (!problems.empty()) return 2;
  std::printf("config ok (hash %s)\n", diffest::pipeline::config_hash(config).c_str());
  return 0;
}

void require_clean_paths(const RunConfig& config) {
  const auto problems = diffest::pipeline::check_paths(config);
  if (!problems.empty()) throw diffest::ConfigError(problems.front());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"difficulty estimation pipeline"};
  app.require_subcommand(1);

  GlobalFlags flags;
  app.add_option("--config", flags.config_path, "run configuration JSON")->expected(1);
  app.add_option("--seed", flags.seed, "override the global seed");
  app.add_option("--out", flags.out_dir, "override the output directory");
  app.add_option("--parallelism", flags.parallelism, "worker bound; 1 forces serial execution");

  auto* validate = app.add_subcommand("validate", "check the config and referenced paths");
  auto* simulate = app.add_subcommand("simulate", "generate a synthetic bank and mock fixture");
  auto* probe = app.add_subcommand("probe", "query the solver ensemble for uncertainty signals");
  auto* direct_cmd = app.add_subcommand("direct", "prompt a solver for direct estimates");
  auto* train = app.add_subcommand("train", "fit and tune the regression models");
  auto* evaluate = app.add_subcommand("evaluate", "score every estimator against ground truth");
  auto* report = app.add_subcommand("report", "render metric tables and per-question files");
  auto* run = app.add_subcommand("run", "simulate, probe, train, evaluate, report");
  bool report_svg = false;
  bool run_svg = false;
  report->add_flag("--svg", report_svg, "also write scatter plots");
  run->add_flag("--svg", run_svg, "also write scatter plots");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (validate->parsed()) return cmd_validate(flags);

    const RunConfig config = load_with_overrides(flags);
    int failures = 0;
    if (simulate->parsed()) {
      require_clean_paths(config);
      failures += report_stage("simulate", diffest::pipeline::stage_simulate(config));
    } else if (probe->parsed()) {
      require_clean_paths(config);
      failures += report_stage("probe", diffest::pipeline::stage_probe(config));
    } else if (direct_cmd->parsed()) {
      require_clean_paths(config);
      failures += report_stage("direct", diffest::pipeline::stage_direct(config));
    } else if (train->parsed()) {
      require_clean_paths(config);
      failures += report_stage("train", diffest::pipeline::stage_train(config));
    } else if (evaluate->parsed()) {
      require_clean_paths(config);
      failures += report_stage("evaluate", diffest::pipeline::stage_evaluate(config));
    } else if (report->parsed()) {
      failures += report_stage("report", diffest::pipeline::stage_report(config, report_svg));
    } else if (run->parsed()) {
      require_clean_paths(config);
      if (config.simulate) {
        failures += report_stage("simulate", diffest::pipeline::stage_simulate(config));
      }
      failures += report_stage("probe", diffest::pipeline::stage_probe(config));
      failures += report_stage("train", diffest::pipeline::stage_train(config));
      failures += report_stage("evaluate", diffest::pipeline::stage_evaluate(config));
      failures += report_stage("report", diffest::pipeline::stage_report(config, run_svg));
    }
    return failures == 0 ? 0 : 1;
  } catch (const diffest::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const diffest::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
