#pragma once

#include <string>
#include <vector>

#include "diffest/common.hpp"

namespace diffest::corpus {

enum class ItemStatus { active, ambiguous, image_excluded };

std::string status_name(ItemStatus s);
ItemStatus status_from_name(std::string_view name);

// One True/False question. Text may contain LaTeX math; it is carried
// verbatim and never normalized here.
struct QuestionItem {
  std::string id;
  std::string course;
  std::string text;
  bool correct_answer = false;
  ItemStatus status = ItemStatus::active;
  std::vector<std::string> years;
};

// Aggregate outcome of one cohort on one question.
struct CohortResult {
  std::string question_id;
  std::string cohort_id;
  long correct_count = 0;
  long total_count = 0;
};

// Pooled proportion correct, the difficulty target. Stored in [0,1].
struct GroundTruth {
  std::string question_id;
  double p_plus = 0.0;
  long total_students = 0;
};

struct QuestionBank {
  std::vector<QuestionItem> items;
  std::vector<CohortResult> results;

  const QuestionItem* find(const std::string& id) const;
};

// Line-delimited JSON with "item" and "result" record kinds.
QuestionBank load_bank(const std::string& path);
void save_bank(const QuestionBank& bank, const std::string& path);

// Validates invariants shared by load_bank and in-memory producers.
void validate_bank(const QuestionBank& bank);

std::vector<QuestionItem> active_items(const QuestionBank& bank);
std::vector<GroundTruth> compute_ground_truth(const QuestionBank& bank);

}  // namespace diffest::corpus
