#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "diffest/corpus.hpp"
#include "diffest/probe.hpp"

namespace diffest::direct {

enum class Mode { single_question, all_questions };

std::string mode_name(Mode mode);
Mode mode_from_name(std::string_view name);

struct CalibrationExample {
  corpus::QuestionItem item;
  double p_plus = 0.0;
};

struct DirectConfig {
  probe::SolverSpec solver;
  Mode mode = Mode::single_question;
  std::optional<CalibrationExample> calibration;
  bool include_cot = true;
};

struct DirectEstimate {
  std::string question_id;
  double estimate = 0.0;  // in [0,1]
  std::string raw_response_ref;
};

// Deterministic estimation prompt: task instruction, each question with its
// marked answer, the calibration example when configured, the step-by-step
// cue when requested, and a fixed final-line answer format.
std::string build_direct_prompt(const DirectConfig& config,
                                const std::vector<corpus::QuestionItem>& items);

// Takes the last percentage stated in the response; long reasoning streams
// mention intermediate numbers first. A bare decimal in [0,1] after an
// "estimate" marker is accepted as-is. Out-of-range numerals are errors,
// never clamped.
double parse_single_estimate(const std::string& response);

// Positional matching against the numbered list in the response.
std::map<std::string, double> parse_all_estimates(const std::string& response,
                                                  const std::vector<std::string>& expected_ids);

// Appends {"question_id", "mode", "response"} records, one JSON object per
// line, flushing each record before parsing is attempted.
class ResponseLog {
 public:
  explicit ResponseLog(const std::string& path);
  std::string append(const std::string& question_id, Mode mode, const std::string& response);
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::size_t records_ = 0;
  std::mutex mu_;
};

struct DirectFailure {
  std::string question_id;
  std::string message;
};

struct DirectRun {
  std::vector<DirectEstimate> estimates;
  std::vector<DirectFailure> failures;
};

struct DirectOptions {
  int parallelism = 4;
  ExecMode mode = ExecMode::parallel;
  probe::RetryPolicy retry;
};

// single_question: one request per active item. all_questions: one request
// for the whole set. Every raw response is logged before parsing; per-item
// errors do not abort the rest.
DirectRun run_direct(const DirectConfig& config, const corpus::QuestionBank& bank,
                     probe::SolverBackend& backend, ResponseLog& log,
                     const DirectOptions& options);

}  // namespace diffest::direct
