#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "diffest/common.hpp"
#include "diffest/corpus.hpp"
#include "diffest/parallel.hpp"
#include "diffest/rng.hpp"

namespace diffest::probe {

struct SolverSpec {
  std::string name;
  std::string endpoint_url;
  std::string model_id;
  double temperature = 0.0;
  int max_tokens = 16;
  std::chrono::milliseconds request_timeout{30000};
};

// Presentation order of the two choices. true_first is the canonical order
// that feeds the scalar first-token-probability feature.
enum class ChoiceOrder { true_first, false_first };

constexpr ChoiceOrder kAllOrders[] = {ChoiceOrder::true_first, ChoiceOrder::false_first};

std::string order_name(ChoiceOrder order);
ChoiceOrder order_from_name(std::string_view name);

// Letter of the correct answer under a given presentation order.
std::string correct_label(bool correct_answer, ChoiceOrder order);

struct PermutationOutcome {
  ChoiceOrder order = ChoiceOrder::true_first;
  std::string chosen_label;
  bool chosen_is_correct = false;
  double first_token_probability = 0.0;  // in (0,1]
};

struct UncertaintySignals {
  std::string question_id;
  std::string solver_name;
  double first_token_probability = 0.0;   // canonical [True, False] order
  double choice_order_sensitivity = 0.0;  // fraction of orders answered correctly
  std::vector<PermutationOutcome> outcomes;
};

std::string format_solver_prompt(const corpus::QuestionItem& item, ChoiceOrder order);

// Raw first-token observation as reported by a backend.
struct FirstTokenReply {
  std::string token;
  double logprob = 0.0;
};

struct SolverQuery {
  std::string question_id;
  ChoiceOrder order = ChoiceOrder::true_first;
  std::string prompt;
};

class SolverBackend {
 public:
  virtual ~SolverBackend() = default;
  // Single-letter answering with log-probabilities.
  virtual FirstTokenReply first_token(const SolverSpec& solver, const SolverQuery& query) = 0;
  // Free-text completion, no log-probabilities. context_id names the question
  // being asked about ("__all__" for whole-set prompts); transport backends
  // ignore it.
  virtual std::string complete(const SolverSpec& solver, const std::string& prompt,
                               const std::string& context_id) = 0;
};

// Table-driven in-process solver. Fixture schema:
//   {"entries": [{"solver": optional, "question_id", "order", "label", "logprob"}],
//    "completions": [{"solver": optional, "question_id", "response"}],
//    "unreachable": [solver names],
//    "fail_times": {solver: n}}
// Entries without "solver" match any solver. Completions use question_id
// "__all__" for whole-set prompts.
class MockBackend : public SolverBackend {
 public:
  MockBackend() = default;
  static MockBackend from_json_file(const std::string& path);
  static MockBackend from_json_text(const std::string& text);

  FirstTokenReply first_token(const SolverSpec& solver, const SolverQuery& query) override;
  std::string complete(const SolverSpec& solver, const std::string& prompt,
                       const std::string& context_id) override;

  void add_entry(const std::string& solver, const std::string& question_id, ChoiceOrder order,
                 const std::string& label, double logprob);
  void add_completion(const std::string& solver, const std::string& question_id,
                      const std::string& response);
  void set_unreachable(const std::string& solver);
  void set_fail_times(const std::string& solver, int times);
  long call_count() const;
  void reset_call_count();

 private:
  std::map<std::string, FirstTokenReply> entries_;
  std::map<std::string, std::string> completions_;
  std::map<std::string, int> fail_times_;
  std::vector<std::string> unreachable_;
  // Behind a pointer so the backend stays movable.
  std::unique_ptr<std::mutex> mu_ = std::make_unique<std::mutex>();
  long calls_ = 0;
};

// OpenAI-style chat completions client. Bearer token is read from the
// environment variable DIFFEST_API_KEY_{NAME} with the solver name uppercased
// and non-alphanumerics mapped to '_'.
class HttpBackend : public SolverBackend {
 public:
  FirstTokenReply first_token(const SolverSpec& solver, const SolverQuery& query) override;
  std::string complete(const SolverSpec& solver, const std::string& prompt,
                       const std::string& context_id) override;
};

std::string api_key_env_name(const std::string& solver_name);

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds base_delay{1000};
  double factor = 4.0;
  std::uint64_t seed = 42;  // drives deterministic jitter
};

PermutationOutcome solve_once(SolverBackend& backend, const SolverSpec& solver,
                              const SolverQuery& query, bool correct_answer);

double choice_order_sensitivity(const std::vector<PermutationOutcome>& outcomes);

// Keyed by (solver, question, order). File-backed when a directory is given,
// memory-only otherwise. Writes are serialized.
class CacheStore {
 public:
  CacheStore() = default;
  explicit CacheStore(const std::string& dir);

  std::optional<FirstTokenReply> load(const std::string& solver, const std::string& question_id,
                                      ChoiceOrder order);
  void store(const std::string& solver, const std::string& question_id, ChoiceOrder order,
             const FirstTokenReply& reply);

 private:
  std::string key_path(const std::string& key) const;
  std::string dir_;
  std::map<std::string, FirstTokenReply> memory_;
  std::mutex mu_;
};

struct ProbeOptions {
  int parallelism = 4;
  ExecMode mode = ExecMode::parallel;
  std::uint64_t seed = 42;
  RetryPolicy retry;
};

struct ProbeFailure {
  std::string solver_name;
  std::string question_id;
  std::string message;
};

struct ProbeResult {
  std::vector<UncertaintySignals> signals;
  std::vector<ProbeFailure> failures;
};

// Queries both choice orders for every (active item, solver) pair. Completed
// queries are served from the cache, so reruns are free. Per-pair failures
// are collected, not thrown.
ProbeResult probe_bank(const corpus::QuestionBank& bank, const std::vector<SolverSpec>& ensemble,
                       SolverBackend& backend, CacheStore& cache, const ProbeOptions& options);

std::string signals_to_csv(const std::vector<UncertaintySignals>& signals);
std::vector<UncertaintySignals> signals_from_csv_file(const std::string& path);

// Runs fn, retrying on TransportError per the policy. `tag` keys the jitter
// stream so concurrent queries do not share delays.
template <class Fn>
auto with_retries(const RetryPolicy& policy, const std::string& tag, Fn&& fn)
    -> decltype(fn()) {
  int attempt = 0;
  for (;;) {
    ++attempt;
    try {
      return fn();
    } catch (const TransportError&) {
      if (attempt >= policy.attempts) throw;
      double delay_ms = static_cast<double>(policy.base_delay.count());
      for (int i = 1; i < attempt; ++i) delay_ms *= policy.factor;
      Rng jitter(derive_seed(policy.seed, tag + "#" + std::to_string(attempt)));
      delay_ms *= 1.0 + 0.1 * jitter.uniform();
      std::this_thread::sleep_for(
          std::chrono::milliseconds(static_cast<long long>(delay_ms)));
    }
  }
}

}  // namespace diffest::probe
