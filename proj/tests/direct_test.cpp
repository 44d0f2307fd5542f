#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <nlohmann/json.hpp>

#include "diffest/direct.hpp"
#include "test_util.hpp"

using namespace diffest;
using direct::Mode;

namespace {

corpus::QuestionItem make_item(const std::string& id, bool answer,
                               const std::string& text = "A gradient statement.") {
  corpus::QuestionItem item;
  item.id = id;
  item.course = "Advanced Machine Learning";
  item.text = text;
  item.correct_answer = answer;
  item.status = corpus::ItemStatus::active;
  item.years = {"23/24"};
  return item;
}

corpus::QuestionBank make_bank(int n_items) {
  corpus::QuestionBank bank;
  for (int i = 0; i < n_items; ++i) {
    bank.items.push_back(make_item("q" + std::to_string(i + 1), i % 2 == 0));
    bank.results.push_back({"q" + std::to_string(i + 1), "c", 3, 4});
  }
  return bank;
}

direct::DirectConfig make_config(Mode mode, bool cot = true) {
  direct::DirectConfig config;
  config.solver.name = "est";
  config.solver.endpoint_url = "mock://";
  config.solver.model_id = "est";
  config.mode = mode;
  config.include_cot = cot;
  return config;
}

direct::DirectOptions fast_options() {
  direct::DirectOptions options;
  options.retry.base_delay = std::chrono::milliseconds(0);
  return options;
}

}  // namespace

TEST_CASE("single-question prompt carries instruction, answer, cot cue, format line") {
  const auto config = make_config(Mode::single_question);
  const auto items = std::vector<corpus::QuestionItem>{make_item("q1", true)};
  const std::string prompt = direct::build_direct_prompt(config, items);
  CHECK(prompt.find("Estimate, from the examiner's perspective, what percentage of students "
                    "will answer each question correctly") != std::string::npos);
  CHECK(prompt.find("Advanced Machine Learning") != std::string::npos);
  CHECK(prompt.find("Correct answer: True") != std::string::npos);
  CHECK(prompt.find("Think step by step.") != std::string::npos);
  const std::string tail = "On the final line write only: ESTIMATE: NN%";
  CHECK(prompt.rfind(tail) == prompt.size() - tail.size());
  CHECK(prompt == direct::build_direct_prompt(config, items));

  const auto no_cot = make_config(Mode::single_question, false);
  CHECK(direct::build_direct_prompt(no_cot, items).find("Think step by step.") ==
        std::string::npos);
}

TEST_CASE("all-questions prompt numbers every item") {
  const auto config = make_config(Mode::all_questions);
  std::vector<corpus::QuestionItem> items;
  for (int i = 0; i < 5; ++i) {
    items.push_back(make_item("q" + std::to_string(i + 1), i % 2 == 0));
  }
  const std::string prompt = direct::build_direct_prompt(config, items);
  for (int i = 1; i <= 5; ++i) {
    CHECK(prompt.find("\n" + std::to_string(i) + ". ") != std::string::npos);
  }
  CHECK(prompt.find("Correct answer: False") != std::string::npos);
}

TEST_CASE("calibration example shows the true percentage and stays out of the set") {
  auto config = make_config(Mode::single_question);
  config.calibration = direct::CalibrationExample{make_item("q0", false), 0.82};
  const std::string prompt =
      direct::build_direct_prompt(config, {make_item("q1", true)});
  CHECK(prompt.find("82%") != std::string::npos);
  CHECK(prompt.find(config.calibration->item.text) != std::string::npos);
  CHECK_THROWS_AS(direct::build_direct_prompt(config, {make_item("q0", false)}), Error);
}

TEST_CASE("single mode takes exactly one item") {
  const auto config = make_config(Mode::single_question);
  CHECK_THROWS_AS(direct::build_direct_prompt(config, {}), Error);
  CHECK_THROWS_AS(
      direct::build_direct_prompt(config, {make_item("q1", true), make_item("q2", false)}),
      Error);
}

TEST_CASE("parse_single_estimate spec triplet") {
  CHECK(direct::parse_single_estimate(
            "step by step reasoning... I estimate 75% of students will answer correctly.") ==
        doctest::Approx(0.75));
  CHECK(direct::parse_single_estimate("Estimate: 0.6") == doctest::Approx(0.6));
  CHECK_THROWS_AS(direct::parse_single_estimate("The question is hard."), Error);
}

TEST_CASE("parse_single_estimate takes the last stated value") {
  CHECK(direct::parse_single_estimate("Around 30%, maybe 40%... ESTIMATE: 60%") ==
        doctest::Approx(0.60));
  CHECK(direct::parse_single_estimate("I first thought 80% but Estimate: 0.62") ==
        doctest::Approx(0.62));
}

TEST_CASE("parse_single_estimate rejects out-of-range numerals without clamping") {
  CHECK_THROWS_AS(direct::parse_single_estimate("The model claims 150% success."), Error);
  CHECK_THROWS_AS(direct::parse_single_estimate("estimate: 1.5"), Error);
}

TEST_CASE("parse_all_estimates maps numbered lines positionally") {
  const auto got = direct::parse_all_estimates("1. 70%\n2. 55%", {"a", "b"});
  CHECK(got.at("a") == doctest::Approx(0.70));
  CHECK(got.at("b") == doctest::Approx(0.55));
}

TEST_CASE("parse_all_estimates reports missing and malformed entries") {
  CHECK_THROWS_WITH_AS(direct::parse_all_estimates("1. 70%", {"a", "b"}),
                       doctest::Contains("'b'"), Error);
  CHECK_THROWS_WITH_AS(direct::parse_all_estimates("1. 70%\n2. abc", {"a", "b"}),
                       doctest::Contains("line 2"), Error);
  CHECK_THROWS_AS(direct::parse_all_estimates("1. 70%\n1. 60%", {"a", "b"}), Error);
  CHECK_THROWS_AS(direct::parse_all_estimates("3. 70%", {"a", "b"}), Error);
}

TEST_CASE("run_direct single mode issues one request per item") {
  const auto bank = make_bank(10);
  probe::MockBackend backend;
  for (int i = 0; i < 10; ++i) {
    backend.add_completion("", "q" + std::to_string(i + 1), "ESTIMATE: 50%");
  }
  TempDir tmp("direct");
  direct::ResponseLog log(tmp.file("responses.jsonl"));
  const auto run =
      direct::run_direct(make_config(Mode::single_question), bank, backend, log, fast_options());
  CHECK(backend.call_count() == 10);
  CHECK(run.failures.empty());
  REQUIRE(run.estimates.size() == 10);
  for (const auto& est : run.estimates) CHECK(est.estimate == doctest::Approx(0.5));
}

TEST_CASE("run_direct all mode issues a single request") {
  const auto bank = make_bank(10);
  probe::MockBackend backend;
  std::string listing;
  for (int i = 1; i <= 10; ++i) listing += std::to_string(i) + ". " + std::to_string(40 + i) + "%\n";
  backend.add_completion("", "__all__", listing);
  TempDir tmp("direct");
  direct::ResponseLog log(tmp.file("responses.jsonl"));
  const auto run =
      direct::run_direct(make_config(Mode::all_questions), bank, backend, log, fast_options());
  CHECK(backend.call_count() == 1);
  REQUIRE(run.estimates.size() == 10);
  CHECK(run.estimates.front().estimate == doctest::Approx(0.41));
}

TEST_CASE("every response is logged even when parsing fails") {
  const auto bank = make_bank(2);
  probe::MockBackend backend;
  backend.add_completion("", "q1", "ESTIMATE: 70%");
  backend.add_completion("", "q2", "no numbers here");
  TempDir tmp("direct");
  direct::ResponseLog log(tmp.file("responses.jsonl"));
  const auto run =
      direct::run_direct(make_config(Mode::single_question), bank, backend, log, fast_options());
  CHECK(run.estimates.size() == 1);
  REQUIRE(run.failures.size() == 1);
  CHECK(run.failures[0].question_id == "q2");

  const auto lines = split_lines(read_file(tmp.file("responses.jsonl")));
  CHECK(lines.size() == 2);  // both raw responses on disk
  bool saw_failure_response = false;
  for (const auto& line : lines) {
    const auto rec = nlohmann::json::parse(line);
    if (rec.at("question_id") == "q2") {
      saw_failure_response = rec.at("response") == "no numbers here";
      CHECK(rec.at("mode") == "single_question");
    }
  }
  CHECK(saw_failure_response);
}

TEST_CASE("calibration item is excluded from the estimated set") {
  const auto bank = make_bank(3);
  probe::MockBackend backend;
  backend.add_completion("", "q2", "ESTIMATE: 40%");
  backend.add_completion("", "q3", "ESTIMATE: 60%");
  auto config = make_config(Mode::single_question);
  config.calibration = direct::CalibrationExample{bank.items[0], 0.75};
  TempDir tmp("direct");
  direct::ResponseLog log(tmp.file("responses.jsonl"));
  const auto run = direct::run_direct(config, bank, backend, log, fast_options());
  CHECK(run.estimates.size() == 2);
  for (const auto& est : run.estimates) CHECK(est.question_id != "q1");
}

TEST_CASE("the committed parser corpus extracts every case or errors as marked") {
  const auto doc =
      nlohmann::json::parse(read_file(std::string(DIFFEST_TEST_DIR) +
                                      "/fixtures/direct_parser_corpus.json"));
  REQUIRE(doc.at("cases").size() == 20);
  for (const auto& c : doc["cases"]) {
    INFO("case ", c.at("name").get<std::string>());
    const std::string response = c.at("response").get<std::string>();
    const bool expect_error = c.at("expect").is_string();
    if (c.at("kind") == "single") {
      if (expect_error) {
        CHECK_THROWS_AS(direct::parse_single_estimate(response), Error);
      } else {
        CHECK(direct::parse_single_estimate(response) ==
              doctest::Approx(c.at("expect").get<double>()).epsilon(1e-12));
      }
    } else {
      const auto ids = c.at("ids").get<std::vector<std::string>>();
      if (expect_error) {
        CHECK_THROWS_AS(direct::parse_all_estimates(response, ids), Error);
      } else {
        const auto got = direct::parse_all_estimates(response, ids);
        for (const auto& [id, value] : c.at("expect").items()) {
          CHECK(got.at(id) == doctest::Approx(value.get<double>()).epsilon(1e-12));
        }
      }
    }
  }
}
