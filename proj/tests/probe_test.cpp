#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <cmath>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "diffest/probe.hpp"
#include "test_util.hpp"

using namespace diffest;
using probe::ChoiceOrder;

namespace {

corpus::QuestionItem make_item(const std::string& id, bool answer) {
  corpus::QuestionItem item;
  item.id = id;
  item.course = "NN";
  item.text = "Statement about $\\nabla f$.";
  item.correct_answer = answer;
  item.status = corpus::ItemStatus::active;
  item.years = {"22/23"};
  return item;
}

corpus::QuestionBank make_bank(int n_items) {
  corpus::QuestionBank bank;
  for (int i = 0; i < n_items; ++i) {
    bank.items.push_back(make_item("q" + std::to_string(i + 1), i % 2 == 0));
    bank.results.push_back({"q" + std::to_string(i + 1), "c", 1, 2});
  }
  return bank;
}

probe::SolverSpec make_solver(const std::string& name) {
  probe::SolverSpec spec;
  spec.name = name;
  spec.endpoint_url = "mock://";
  spec.model_id = name;
  return spec;
}

// Mock where every solver picks the correct answer with probability 0.8.
probe::MockBackend confident_backend(const corpus::QuestionBank& bank,
                                     const std::vector<std::string>& solvers) {
  probe::MockBackend backend;
  for (const auto& solver : solvers) {
    for (const auto& item : bank.items) {
      for (ChoiceOrder order : probe::kAllOrders) {
        backend.add_entry(solver, item.id, order,
                          probe::correct_label(item.correct_answer, order), -0.2231435513);
      }
    }
  }
  return backend;
}

probe::RetryPolicy fast_retry() {
  probe::RetryPolicy policy;
  policy.base_delay = std::chrono::milliseconds(0);
  return policy;
}

}  // namespace

TEST_CASE("solver prompt lists choices in the requested order") {
  const auto item = make_item("q1", true);
  const std::string tf = probe::format_solver_prompt(item, ChoiceOrder::true_first);
  const std::string ft = probe::format_solver_prompt(item, ChoiceOrder::false_first);
  CHECK(tf.find("A) True") != std::string::npos);
  CHECK(tf.find("B) False") != std::string::npos);
  CHECK(tf.find("A) True") < tf.find("B) False"));
  CHECK(ft.find("A) False") != std::string::npos);
  CHECK(ft.find("B) True") != std::string::npos);
  CHECK(tf.find(item.text) != std::string::npos);
  // the answer is never disclosed
  CHECK(tf.find("Correct") == std::string::npos);
  CHECK(tf == probe::format_solver_prompt(item, ChoiceOrder::true_first));
}

TEST_CASE("correct_label tracks answer and order") {
  CHECK(probe::correct_label(true, ChoiceOrder::true_first) == "A");
  CHECK(probe::correct_label(true, ChoiceOrder::false_first) == "B");
  CHECK(probe::correct_label(false, ChoiceOrder::true_first) == "B");
  CHECK(probe::correct_label(false, ChoiceOrder::false_first) == "A");
}

TEST_CASE("solve_once converts log-probabilities and normalizes labels") {
  probe::MockBackend backend;
  backend.add_entry("", "q1", ChoiceOrder::true_first, "A", -0.2231435513);
  backend.add_entry("", "q1", ChoiceOrder::false_first, " b)", 0.0);
  const auto solver = make_solver("s");

  const auto a = probe::solve_once(backend, solver, {"q1", ChoiceOrder::true_first, "p"}, true);
  CHECK(a.chosen_label == "A");
  CHECK(a.chosen_is_correct);
  CHECK(a.first_token_probability == doctest::Approx(0.8).epsilon(1e-9));

  const auto b = probe::solve_once(backend, solver, {"q1", ChoiceOrder::false_first, "p"}, true);
  CHECK(b.chosen_label == "B");
  CHECK(b.chosen_is_correct);  // B is True under false_first
  CHECK(b.first_token_probability == 1.0);
}

TEST_CASE("solve_once rejects unrecognized labels and positive logprobs") {
  probe::MockBackend backend;
  backend.add_entry("", "q1", ChoiceOrder::true_first, "Maybe", -0.1);
  backend.add_entry("", "q2", ChoiceOrder::true_first, "A", 0.5);
  const auto solver = make_solver("s");
  CHECK_THROWS_WITH_AS(
      probe::solve_once(backend, solver, {"q1", ChoiceOrder::true_first, "p"}, true),
      doctest::Contains("Maybe"), Error);
  CHECK_THROWS_AS(probe::solve_once(backend, solver, {"q2", ChoiceOrder::true_first, "p"}, true),
                  Error);
}

TEST_CASE("choice_order_sensitivity is the correct fraction") {
  probe::PermutationOutcome correct;
  correct.chosen_is_correct = true;
  probe::PermutationOutcome wrong;
  wrong.chosen_is_correct = false;
  CHECK(probe::choice_order_sensitivity({correct, correct}) == 1.0);
  CHECK(probe::choice_order_sensitivity({correct, wrong}) == 0.5);
  CHECK(probe::choice_order_sensitivity({wrong, wrong}) == 0.0);
  CHECK(probe::choice_order_sensitivity({wrong, correct}) ==
        probe::choice_order_sensitivity({correct, wrong}));
  CHECK_THROWS_AS(probe::choice_order_sensitivity({}), Error);
}

TEST_CASE("probe_bank yields one signal row per active pair and fills the cache") {
  TempDir tmp("probe");
  const auto bank = make_bank(2);
  const std::vector<probe::SolverSpec> ensemble = {make_solver("s1"), make_solver("s2"),
                                                   make_solver("s3")};
  auto backend = confident_backend(bank, {"s1", "s2", "s3"});
  probe::CacheStore cache(tmp.file("cache"));
  probe::ProbeOptions options;
  options.retry = fast_retry();
  const auto result = probe::probe_bank(bank, ensemble, backend, cache, options);
  CHECK(result.failures.empty());
  CHECK(result.signals.size() == 6);
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& entry :
       std::filesystem::directory_iterator(tmp.file("cache"))) {
    ++files;
  }
  CHECK(files == 12);  // two orders per pair
  for (const auto& s : result.signals) {
    CHECK(s.choice_order_sensitivity == 1.0);  // always-correct mock
    CHECK(s.first_token_probability == doctest::Approx(0.8).epsilon(1e-9));
    CHECK(s.outcomes.size() == 2);
  }
}

TEST_CASE("a warm cache serves reruns without backend calls, bit for bit") {
  TempDir tmp("probe");
  const auto bank = make_bank(3);
  const std::vector<probe::SolverSpec> ensemble = {make_solver("s1"), make_solver("s2")};
  auto backend = confident_backend(bank, {"s1", "s2"});
  probe::ProbeOptions options;
  options.retry = fast_retry();

  std::string first_csv;
  {
    probe::CacheStore cache(tmp.file("cache"));
    const auto result = probe::probe_bank(bank, ensemble, backend, cache, options);
    first_csv = probe::signals_to_csv(result.signals);
    CHECK(backend.call_count() == 12);
  }
  backend.reset_call_count();
  {
    probe::CacheStore cache(tmp.file("cache"));  // fresh store over the same directory
    const auto result = probe::probe_bank(bank, ensemble, backend, cache, options);
    CHECK(backend.call_count() == 0);
    CHECK(probe::signals_to_csv(result.signals) == first_csv);
  }
}

TEST_CASE("an unreachable solver fails per pair without sinking the rest") {
  const auto bank = make_bank(2);
  const std::vector<probe::SolverSpec> ensemble = {make_solver("s1"), make_solver("s2"),
                                                   make_solver("down")};
  auto backend = confident_backend(bank, {"s1", "s2"});
  backend.set_unreachable("down");
  probe::CacheStore cache;
  probe::ProbeOptions options;
  options.retry = fast_retry();
  const auto result = probe::probe_bank(bank, ensemble, backend, cache, options);
  CHECK(result.signals.size() == 4);
  REQUIRE(result.failures.size() == 2);
  for (const auto& f : result.failures) CHECK(f.solver_name == "down");
}

TEST_CASE("transient transport failures are retried to success") {
  const auto bank = make_bank(1);
  auto backend = confident_backend(bank, {"s1"});
  backend.set_fail_times("s1", 1);  // first call fails, retry succeeds
  probe::CacheStore cache;
  probe::ProbeOptions options;
  options.retry = fast_retry();
  const auto result =
      probe::probe_bank(bank, {make_solver("s1")}, backend, cache, options);
  CHECK(result.failures.empty());
  CHECK(result.signals.size() == 1);

  auto exhausted = confident_backend(bank, {"s1"});
  exhausted.set_fail_times("s1", 10);  // more than the attempt budget
  probe::CacheStore cache2;
  const auto failed =
      probe::probe_bank(bank, {make_solver("s1")}, exhausted, cache2, options);
  CHECK(failed.signals.empty());
  CHECK(failed.failures.size() == 1);
}

TEST_CASE("probe_bank validates the ensemble") {
  const auto bank = make_bank(1);
  probe::MockBackend backend;
  probe::CacheStore cache;
  probe::ProbeOptions options;
  CHECK_THROWS_AS(probe::probe_bank(bank, {}, backend, cache, options), Error);
  CHECK_THROWS_AS(
      probe::probe_bank(bank, {make_solver("s"), make_solver("s")}, backend, cache, options),
      Error);
}

TEST_CASE("signals csv round-trips the table") {
  const auto bank = make_bank(2);
  auto backend = confident_backend(bank, {"s1"});
  probe::CacheStore cache;
  probe::ProbeOptions options;
  options.retry = fast_retry();
  const auto result = probe::probe_bank(bank, {make_solver("s1")}, backend, cache, options);
  TempDir tmp("probe");
  write_file(tmp.file("signals.csv"), probe::signals_to_csv(result.signals));
  const auto back = probe::signals_from_csv_file(tmp.file("signals.csv"));
  REQUIRE(back.size() == result.signals.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].question_id == result.signals[i].question_id);
    CHECK(back[i].solver_name == result.signals[i].solver_name);
    CHECK(back[i].first_token_probability == result.signals[i].first_token_probability);
    CHECK(back[i].choice_order_sensitivity == result.signals[i].choice_order_sensitivity);
  }
}

TEST_CASE("mock fixtures load from json text") {
  const std::string fixture = R"({
    "entries": [
      {"question_id": "q1", "order": "true_false", "label": "A", "logprob": -0.2231435513},
      {"solver": "s2", "question_id": "q1", "order": "false_true", "label": "B", "logprob": 0.0}
    ],
    "completions": [{"question_id": "q1", "response": "ESTIMATE: 60%"}],
    "unreachable": ["s9"]
  })";
  auto backend = probe::MockBackend::from_json_text(fixture);
  const auto solver = make_solver("s2");
  const auto reply = backend.first_token(solver, {"q1", ChoiceOrder::false_first, "p"});
  CHECK(reply.token == "B");
  CHECK(backend.complete(solver, "prompt", "q1") == "ESTIMATE: 60%");
  const auto down = make_solver("s9");
  CHECK_THROWS_AS(backend.first_token(down, {"q1", ChoiceOrder::true_first, "p"}),
                  TransportError);
}

TEST_CASE("api key env names are sanitized") {
  CHECK(probe::api_key_env_name("gpt-4o mini") == "DIFFEST_API_KEY_GPT_4O_MINI");
}

TEST_CASE("http backend speaks the chat completions protocol") {
  httplib::Server server;
  std::atomic<int> hits{0};
  std::string seen_auth;
  std::string seen_body;
  server.Post("/v1/chat/completions",
              [&](const httplib::Request& req, httplib::Response& res) {
                ++hits;
                seen_auth = req.get_header_value("Authorization");
                seen_body = req.body;
                if (hits.load() == 1) {
                  res.status = 429;  // first call throttled
                  res.set_content("slow down", "text/plain");
                  return;
                }
                nlohmann::json reply = {
                    {"choices",
                     {{{"message", {{"role", "assistant"}, {"content", "A"}}},
                       {"logprobs",
                        {{"content",
                          {{{"token", "A"},
                            {"logprob", -0.2231435513},
                            {"top_logprobs",
                             {{{"token", "A"}, {"logprob", -0.2231435513}},
                              {{"token", "B"}, {"logprob", -1.6094379124}}}}}}}}}}}}};
                res.set_content(reply.dump(), "application/json");
              });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread server_thread([&] { server.listen_after_bind(); });
  while (!server.is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(1));

  setenv("DIFFEST_API_KEY_WIRE", "sekrit", 1);
  probe::SolverSpec solver;
  solver.name = "wire";
  solver.endpoint_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
  solver.model_id = "test-model";
  solver.max_tokens = 4;

  probe::HttpBackend backend;
  probe::SolverQuery query{"q1", ChoiceOrder::true_first, "prompt text"};
  CHECK_THROWS_AS(backend.first_token(solver, query), TransportError);  // the 429

  probe::RetryPolicy policy = fast_retry();
  const auto reply = probe::with_retries(policy, "t", [&] {
    return backend.first_token(solver, query);
  });
  CHECK(reply.token == "A");
  CHECK(reply.logprob == doctest::Approx(-0.2231435513));
  CHECK(seen_auth == "Bearer sekrit");
  const auto body = nlohmann::json::parse(seen_body);
  CHECK(body.at("model") == "test-model");
  CHECK(body.at("logprobs") == true);
  CHECK(body.at("top_logprobs") == 5);
  CHECK(body.at("max_tokens") == 4);
  CHECK(body.at("messages")[0].at("content") == "prompt text");

  server.stop();
  server_thread.join();
}

TEST_CASE("http backend surfaces missing log-probabilities") {
  httplib::Server server;
  server.Post("/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    nlohmann::json reply = {
        {"choices", {{{"message", {{"role", "assistant"}, {"content", "A"}}}}}}};
    res.set_content(reply.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread server_thread([&] { server.listen_after_bind(); });
  while (!server.is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(1));

  probe::SolverSpec solver;
  solver.name = "wire2";
  solver.endpoint_url = "http://127.0.0.1:" + std::to_string(port);
  solver.model_id = "m";
  probe::HttpBackend backend;
  CHECK_THROWS_WITH_AS(backend.first_token(solver, {"q1", ChoiceOrder::true_first, "p"}),
                       doctest::Contains("log-probabilities"), Error);
  // The completion path needs no logprobs at all.
  CHECK(backend.complete(solver, "p", "q1") == "A");

  server.stop();
  server_thread.join();
}
