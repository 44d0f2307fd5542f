#include "diffest/corpus.hpp"

#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace diffest::corpus {

using nlohmann::json;

std::string status_name(ItemStatus s) {
  switch (s) {
    case ItemStatus::active: return "active";
    case ItemStatus::ambiguous: return "ambiguous";
    case ItemStatus::image_excluded: return "image_excluded";
  }
  return "active";
}

ItemStatus status_from_name(std::string_view name) {
  if (name == "active") return ItemStatus::active;
  if (name == "ambiguous") return ItemStatus::ambiguous;
  if (name == "image_excluded") return ItemStatus::image_excluded;
  throw Error("unknown item status: '" + std::string(name) + "'");
}

const QuestionItem* QuestionBank::find(const std::string& id) const {
  for (const auto& item : items) {
    if (item.id == id) return &item;
  }
  return nullptr;
}

namespace {

std::string require_string(const json& rec, const char* field, std::size_t line_no) {
  if (!rec.contains(field) || !rec[field].is_string()) {
    throw Error("bank line " + std::to_string(line_no) + ": missing or non-string field '" +
                field + "'");
  }
  return rec[field].get<std::string>();
}

long require_count(const json& rec, const char* field, std::size_t line_no) {
  if (!rec.contains(field) || !rec[field].is_number_integer()) {
    throw Error("bank line " + std::to_string(line_no) + ": missing or non-integer field '" +
                field + "'");
  }
  return rec[field].get<long>();
}

}  // namespace

QuestionBank load_bank(const std::string& path) {
  QuestionBank bank;
  const std::string content = read_file(path);
  const auto lines = split_lines(content);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    const std::string line = trim(lines[i]);
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw Error("bank line " + std::to_string(line_no) + ": malformed JSON: " + e.what());
    }
    const std::string kind = require_string(rec, "kind", line_no);
    if (kind == "item") {
      QuestionItem item;
      item.id = require_string(rec, "id", line_no);
      item.course = require_string(rec, "course", line_no);
      item.text = require_string(rec, "text", line_no);
      if (!rec.contains("answer") || !rec["answer"].is_boolean()) {
        throw Error("bank line " + std::to_string(line_no) +
                    ": missing or non-boolean field 'answer'");
      }
      item.correct_answer = rec["answer"].get<bool>();
      item.status = status_from_name(require_string(rec, "status", line_no));
      if (!rec.contains("years") || !rec["years"].is_array()) {
        throw Error("bank line " + std::to_string(line_no) + ": missing 'years' array");
      }
      for (const auto& y : rec["years"]) {
        if (!y.is_string()) {
          throw Error("bank line " + std::to_string(line_no) + ": non-string year entry");
        }
        item.years.push_back(y.get<std::string>());
      }
      bank.items.push_back(std::move(item));
    } else if (kind == "result") {
      CohortResult r;
      r.question_id = require_string(rec, "question_id", line_no);
      r.cohort_id = require_string(rec, "cohort_id", line_no);
      r.correct_count = require_count(rec, "correct", line_no);
      r.total_count = require_count(rec, "total", line_no);
      bank.results.push_back(std::move(r));
    } else {
      throw Error("bank line " + std::to_string(line_no) + ": unknown record kind '" + kind +
                  "'");
    }
  }
  validate_bank(bank);
  return bank;
}

void save_bank(const QuestionBank& bank, const std::string& path) {
  std::string out;
  for (const auto& item : bank.items) {
    json rec;
    rec["kind"] = "item";
    rec["id"] = item.id;
    rec["course"] = item.course;
    rec["text"] = item.text;
    rec["answer"] = item.correct_answer;
    rec["status"] = status_name(item.status);
    rec["years"] = item.years;
    out += rec.dump();
    out += '\n';
  }
  for (const auto& r : bank.results) {
    json rec;
    rec["kind"] = "result";
    rec["question_id"] = r.question_id;
    rec["cohort_id"] = r.cohort_id;
    rec["correct"] = r.correct_count;
    rec["total"] = r.total_count;
    out += rec.dump();
    out += '\n';
  }
  write_file(path, out);
}

void validate_bank(const QuestionBank& bank) {
  std::set<std::string> ids;
  for (const auto& item : bank.items) {
    if (item.text.empty()) throw Error("item '" + item.id + "': empty text");
    if (item.years.empty()) throw Error("item '" + item.id + "': empty years list");
    if (!ids.insert(item.id).second) {
      throw Error("duplicate question id '" + item.id + "'");
    }
  }
  for (const auto& r : bank.results) {
    if (r.total_count <= 0) {
      throw Error("result for '" + r.question_id + "': total must be positive");
    }
    if (r.correct_count < 0 || r.correct_count > r.total_count) {
      throw Error("result for '" + r.question_id + "': correct count out of range");
    }
    if (ids.find(r.question_id) == ids.end()) {
      throw Error("result references unknown question '" + r.question_id + "'");
    }
  }
}

std::vector<QuestionItem> active_items(const QuestionBank& bank) {
  std::vector<QuestionItem> out;
  for (const auto& item : bank.items) {
    if (item.status == ItemStatus::active) out.push_back(item);
  }
  return out;
}

std::vector<GroundTruth> compute_ground_truth(const QuestionBank& bank) {
  std::map<std::string, std::pair<long, long>> pooled;  // id -> (correct, total)
  for (const auto& r : bank.results) {
    auto& p = pooled[r.question_id];
    p.first += r.correct_count;
    p.second += r.total_count;
  }
  std::vector<GroundTruth> out;
  for (const auto& item : bank.items) {
    if (item.status != ItemStatus::active) continue;
    auto it = pooled.find(item.id);
    if (it == pooled.end() || it->second.second == 0) {
      throw Error("active item '" + item.id + "' has no cohort results");
    }
    GroundTruth gt;
    gt.question_id = item.id;
    gt.p_plus = static_cast<double>(it->second.first) / static_cast<double>(it->second.second);
    gt.total_students = it->second.second;
    out.push_back(std::move(gt));
  }
  return out;
}

}  // namespace diffest::corpus
