#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "diffest/corpus.hpp"
#include "diffest/rng.hpp"
#include "test_util.hpp"

using namespace diffest;
using corpus::ItemStatus;

namespace {

std::string item_line(const std::string& id, const std::string& status,
                      const std::string& text = "Some statement.") {
  return R"({"kind":"item","id":")" + id + R"(","course":"NN","text":")" + text +
         R"(","answer":true,"status":")" + status + R"(","years":["22/23"]})" + "\n";
}

std::string result_line(const std::string& id, const std::string& cohort, long correct,
                        long total) {
  return R"({"kind":"result","question_id":")" + id + R"(","cohort_id":")" + cohort +
         R"(","correct":)" + std::to_string(correct) + R"(,"total":)" + std::to_string(total) +
         "}\n";
}

corpus::QuestionBank write_and_load(TempDir& tmp, const std::string& content) {
  write_file(tmp.file("bank.jsonl"), content);
  return corpus::load_bank(tmp.file("bank.jsonl"));
}

}  // namespace

TEST_CASE("load_bank reads a well-formed three-item file") {
  TempDir tmp("corpus");
  const auto bank = write_and_load(tmp, item_line("q1", "active") + item_line("q2", "active") +
                                            item_line("q3", "ambiguous") +
                                            result_line("q1", "22/23", 3, 4));
  CHECK(bank.items.size() == 3);
  CHECK(bank.results.size() == 1);
  CHECK(bank.items[2].status == ItemStatus::ambiguous);
  CHECK(bank.find("q2") != nullptr);
  CHECK(bank.find("missing") == nullptr);
}

TEST_CASE("load_bank rejects duplicate ids, naming the offender") {
  TempDir tmp("corpus");
  CHECK_THROWS_WITH_AS(write_and_load(tmp, item_line("q1", "active") + item_line("q1", "active")),
                       doctest::Contains("q1"), Error);
}

TEST_CASE("load_bank rejects dangling result references") {
  TempDir tmp("corpus");
  CHECK_THROWS_WITH_AS(
      write_and_load(tmp, item_line("q1", "active") + result_line("q99", "22/23", 1, 2)),
      doctest::Contains("q99"), Error);
}

TEST_CASE("load_bank reports the line number of a malformed record") {
  TempDir tmp("corpus");
  CHECK_THROWS_WITH_AS(write_and_load(tmp, item_line("q1", "active") + "{not json\n"),
                       doctest::Contains("line 2"), Error);
}

TEST_CASE("load_bank validates counts and status names") {
  TempDir tmp("corpus");
  CHECK_THROWS_AS(write_and_load(tmp, item_line("q1", "active") + result_line("q1", "c", 5, 4)),
                  Error);
  CHECK_THROWS_AS(write_and_load(tmp, item_line("q1", "removed")), Error);
}

TEST_CASE("ground truth pools counts exactly") {
  TempDir tmp("corpus");
  const auto bank = write_and_load(
      tmp, item_line("q1", "active") + item_line("q2", "active") + item_line("q3", "active") +
               result_line("q1", "a", 3, 4) + result_line("q2", "a", 50, 100) +
               result_line("q2", "b", 30, 50) + result_line("q3", "a", 0, 10));
  const auto truths = corpus::compute_ground_truth(bank);
  REQUIRE(truths.size() == 3);
  CHECK(truths[0].p_plus == 0.75);
  CHECK(truths[1].p_plus == doctest::Approx(0.5333333333333333).epsilon(1e-15));
  CHECK(truths[1].total_students == 150);
  CHECK(truths[2].p_plus == 0.0);
}

TEST_CASE("ground truth requires results for every active item") {
  TempDir tmp("corpus");
  const auto bank = write_and_load(tmp, item_line("q1", "active"));
  CHECK_THROWS_WITH_AS(corpus::compute_ground_truth(bank), doctest::Contains("q1"), Error);
}

TEST_CASE("excluded items need no results and appear in no truth") {
  TempDir tmp("corpus");
  const auto bank = write_and_load(tmp, item_line("q1", "active") +
                                            item_line("q2", "image_excluded") +
                                            result_line("q1", "a", 1, 2));
  const auto truths = corpus::compute_ground_truth(bank);
  REQUIRE(truths.size() == 1);
  CHECK(truths[0].question_id == "q1");
}

TEST_CASE("active_items filters and preserves order") {
  TempDir tmp("corpus");
  const auto bank = write_and_load(tmp, item_line("q1", "active") + item_line("q2", "ambiguous") +
                                            item_line("q3", "active"));
  const auto active = corpus::active_items(bank);
  REQUIRE(active.size() == 2);
  CHECK(active[0].id == "q1");
  CHECK(active[1].id == "q3");
}

TEST_CASE("a 60-item bank with one exclusion keeps 59 active items") {
  TempDir tmp("corpus");
  std::string content;
  for (int i = 1; i <= 60; ++i) {
    content += item_line("q" + std::to_string(i), i == 7 ? "ambiguous" : "active");
  }
  const auto bank = write_and_load(tmp, content);
  CHECK(corpus::active_items(bank).size() == 59);
}

TEST_CASE("active_items is the identity on an all-active bank, and idempotent") {
  TempDir tmp("corpus");
  const auto bank = write_and_load(tmp, item_line("q1", "active") + item_line("q2", "active"));
  const auto once = corpus::active_items(bank);
  REQUIRE(once.size() == 2);
  corpus::QuestionBank rebanked;
  rebanked.items = once;
  const auto twice = corpus::active_items(rebanked);
  REQUIRE(twice.size() == once.size());
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(twice[i].id == once[i].id);
}

TEST_CASE("students total matches the result rows of active items") {
  TempDir tmp("corpus");
  Rng rng(11);
  std::string content;
  long expected = 0;
  for (int q = 1; q <= 12; ++q) {
    const bool active = q % 5 != 0;
    content += item_line("q" + std::to_string(q), active ? "active" : "ambiguous");
    const int cohorts = 1 + int(rng.below(3));
    for (int c = 0; c < cohorts; ++c) {
      const long total = 10 + long(rng.below(100));
      const long correct = long(rng.below(std::uint64_t(total) + 1));
      content += result_line("q" + std::to_string(q), "c" + std::to_string(c), correct, total);
      if (active) expected += total;
    }
  }
  const auto bank = write_and_load(tmp, content);
  long got = 0;
  for (const auto& gt : corpus::compute_ground_truth(bank)) got += gt.total_students;
  CHECK(got == expected);
}

TEST_CASE("p_plus is invariant under splitting a cohort with the same sums") {
  TempDir tmp("corpus");
  const auto pooled = write_and_load(tmp, item_line("q1", "active") + result_line("q1", "a", 37, 80));
  TempDir tmp2("corpus");
  const auto split = write_and_load(tmp2, item_line("q1", "active") +
                                              result_line("q1", "a1", 20, 50) +
                                              result_line("q1", "a2", 17, 30));
  CHECK(corpus::compute_ground_truth(pooled)[0].p_plus ==
        corpus::compute_ground_truth(split)[0].p_plus);
}

TEST_CASE("save_bank then load_bank is lossless") {
  TempDir tmp("corpus");
  const auto bank = write_and_load(
      tmp, item_line("q1", "active", "Let $f, g$ be differentiable, \\\"quoted\\\".") +
               item_line("q2", "image_excluded") + result_line("q1", "a", 3, 4));
  corpus::save_bank(bank, tmp.file("copy.jsonl"));
  const auto back = corpus::load_bank(tmp.file("copy.jsonl"));
  REQUIRE(back.items.size() == bank.items.size());
  CHECK(back.items[0].text == bank.items[0].text);
  CHECK(back.items[1].status == ItemStatus::image_excluded);
  REQUIRE(back.results.size() == 1);
  CHECK(back.results[0].correct_count == 3);
}
