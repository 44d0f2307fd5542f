#include "diffest/direct.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <regex>
#include <set>

#include <nlohmann/json.hpp>

#include "diffest/parallel.hpp"

namespace diffest::direct {

using nlohmann::json;

std::string mode_name(Mode mode) {
  return mode == Mode::single_question ? "single_question" : "all_questions";
}

Mode mode_from_name(std::string_view name) {
  if (name == "single_question") return Mode::single_question;
  if (name == "all_questions") return Mode::all_questions;
  throw Error("unknown direct-estimation mode: '" + std::string(name) + "'");
}

namespace {

std::string format_percent(double p_plus) {
  const double percent = p_plus * 100.0;
  const double rounded = std::nearbyint(percent);
  if (std::fabs(percent - rounded) < 1e-9) {
    return std::to_string(static_cast<long long>(rounded)) + "%";
  }
  return format_double(percent) + "%";
}

std::string render_item(const corpus::QuestionItem& item) {
  return item.text + "\nCorrect answer: " + (item.correct_answer ? "True" : "False") + "\n";
}

}  // namespace

std::string build_direct_prompt(const DirectConfig& config,
                                const std::vector<corpus::QuestionItem>& items) {
  if (items.empty()) throw Error("build_direct_prompt: no items");
  if (config.mode == Mode::single_question && items.size() != 1) {
    throw Error("build_direct_prompt: single_question mode takes exactly one item");
  }
  if (config.calibration) {
    for (const auto& item : items) {
      if (item.id == config.calibration->item.id) {
        throw Error("build_direct_prompt: calibration item '" + item.id +
                    "' must not be in the estimated set");
      }
    }
  }

  std::string prompt;
  prompt += "Below are exam questions from the " + items.front().course +
            " course. For each question, the correct answer is indicated. "
            "Estimate, from the examiner's perspective, what percentage of students will "
            "answer each question correctly. Feel free to re-visit and adjust previous "
            "estimates.\n\n";

  if (config.calibration) {
    prompt += "Example question, for calibration. " + format_percent(config.calibration->p_plus) +
              " of students answered it correctly:\n" + render_item(config.calibration->item) +
              "\n";
  }

  if (config.mode == Mode::single_question) {
    prompt += "Question:\n" + render_item(items.front());
  } else {
    for (std::size_t i = 0; i < items.size(); ++i) {
      prompt += std::to_string(i + 1) + ". " + render_item(items[i]);
    }
  }
  prompt += "\n";
  if (config.include_cot) prompt += "Think step by step.\n";
  if (config.mode == Mode::single_question) {
    prompt += "On the final line write only: ESTIMATE: NN%";
  } else {
    prompt += "End your response with one line per question, in order, each of the form: "
              "N. NN%";
  }
  return prompt;
}

namespace {

struct Candidate {
  enum class Kind { percent, proportion, out_of_range };
  std::size_t pos = 0;
  double value = 0.0;
  Kind kind = Kind::percent;
};

const std::regex kPercentPattern(R"((\d+(?:\.\d+)?)\s*%)");
const std::regex kMarkerPattern(R"(estimate[sd]?\s*[:=]?\s*(\d+(?:\.\d+)?))",
                                std::regex::icase);

bool percent_sign_follows(const std::string& text, std::size_t end) {
  std::size_t i = end;
  while (i < text.size() && (text[i] == ' ' || text[i] == '\t')) ++i;
  return i < text.size() && text[i] == '%';
}

}  // namespace

double parse_single_estimate(const std::string& response) {
  std::vector<Candidate> candidates;

  for (auto it = std::sregex_iterator(response.begin(), response.end(), kPercentPattern);
       it != std::sregex_iterator(); ++it) {
    Candidate c;
    c.pos = static_cast<std::size_t>(it->position(1));
    c.value = parse_double(it->str(1), "parse_single_estimate");
    c.kind = Candidate::Kind::percent;
    candidates.push_back(c);
  }
  for (auto it = std::sregex_iterator(response.begin(), response.end(), kMarkerPattern);
       it != std::sregex_iterator(); ++it) {
    const std::size_t pos = static_cast<std::size_t>(it->position(1));
    const std::size_t end = pos + it->str(1).size();
    if (percent_sign_follows(response, end)) continue;  // the percent scan owns it
    const double value = parse_double(it->str(1), "parse_single_estimate");
    candidates.push_back({pos, value,
                          value >= 0.0 && value <= 1.0 ? Candidate::Kind::proportion
                                                       : Candidate::Kind::out_of_range});
  }

  if (candidates.empty()) {
    throw Error("parse_single_estimate: no extractable estimate in response");
  }
  const auto last = std::max_element(
      candidates.begin(), candidates.end(),
      [](const Candidate& a, const Candidate& b) { return a.pos < b.pos; });
  switch (last->kind) {
    case Candidate::Kind::percent:
      if (last->value < 0.0 || last->value > 100.0) {
        throw Error("parse_single_estimate: estimate " + format_double(last->value) +
                    "% outside [0,100]");
      }
      return last->value / 100.0;
    case Candidate::Kind::proportion:
      return last->value;
    case Candidate::Kind::out_of_range:
      break;
  }
  throw Error("parse_single_estimate: bare estimate " + format_double(last->value) +
              " outside [0,1]");
}

namespace {

// Value on a numbered list line: "NN%" or a bare proportion in [0,1].
double parse_list_value(const std::string& text, std::size_t line_no) {
  const std::string value = trim(text);
  const std::string context = "parse_all_estimates: line " + std::to_string(line_no);
  if (value.empty()) throw Error(context + ": empty estimate");
  if (value.back() == '%') {
    const double percent = parse_double(trim(value.substr(0, value.size() - 1)), context);
    if (percent < 0.0 || percent > 100.0) {
      throw Error(context + ": estimate " + value + " outside [0,100]");
    }
    return percent / 100.0;
  }
  double v = 0.0;
  try {
    v = parse_double(value, context);
  } catch (const Error&) {
    throw Error(context + ": cannot parse estimate '" + value + "'");
  }
  if (v < 0.0 || v > 1.0) {
    throw Error(context + ": bare estimate " + value + " outside [0,1]");
  }
  return v;
}

const std::regex kNumberedLine(R"(^\s*(\d+)\s*[.):\]]\s*(.*)$)");

}  // namespace

std::map<std::string, double> parse_all_estimates(const std::string& response,
                                                  const std::vector<std::string>& expected_ids) {
  if (expected_ids.empty()) throw Error("parse_all_estimates: no expected ids");
  const auto lines = split_lines(response);
  std::map<std::size_t, double> by_position;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::smatch m;
    if (!std::regex_match(lines[i], m, kNumberedLine)) continue;
    const std::size_t number = static_cast<std::size_t>(std::stoul(m.str(1)));
    if (number == 0 || number > expected_ids.size()) {
      throw Error("parse_all_estimates: line " + std::to_string(i + 1) + ": item number " +
                  m.str(1) + " outside 1.." + std::to_string(expected_ids.size()));
    }
    const double value = parse_list_value(m.str(2), i + 1);
    if (!by_position.emplace(number, value).second) {
      throw Error("parse_all_estimates: line " + std::to_string(i + 1) +
                  ": duplicate entry for item " + m.str(1));
    }
  }
  std::vector<std::string> missing;
  for (std::size_t i = 0; i < expected_ids.size(); ++i) {
    if (by_position.find(i + 1) == by_position.end()) missing.push_back(expected_ids[i]);
  }
  if (!missing.empty()) {
    std::string msg = "parse_all_estimates: missing estimate for";
    for (const auto& id : missing) msg += " '" + id + "'";
    throw Error(msg);
  }
  std::map<std::string, double> out;
  for (const auto& [number, value] : by_position) {
    out[expected_ids[number - 1]] = value;
  }
  return out;
}

ResponseLog::ResponseLog(const std::string& path) : path_(path) {
  // Truncate so a rerun starts a fresh log.
  write_file(path_, "");
}

std::string ResponseLog::append(const std::string& question_id, Mode mode,
                                const std::string& response) {
  std::lock_guard<std::mutex> lock(mu_);
  json rec;
  rec["question_id"] = question_id;
  rec["mode"] = mode_name(mode);
  rec["response"] = response;
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  if (!out) throw Error("cannot append to response log: " + path_);
  out << rec.dump() << "\n";
  out.flush();
  ++records_;
  return "log:" + std::to_string(records_);
}

DirectRun run_direct(const DirectConfig& config, const corpus::QuestionBank& bank,
                     probe::SolverBackend& backend, ResponseLog& log,
                     const DirectOptions& options) {
  std::vector<corpus::QuestionItem> items = corpus::active_items(bank);
  if (config.calibration) {
    items.erase(std::remove_if(items.begin(), items.end(),
                               [&](const corpus::QuestionItem& item) {
                                 return item.id == config.calibration->item.id;
                               }),
                items.end());
  }
  if (items.empty()) throw Error("run_direct: no active items to estimate");

  DirectRun run;
  if (config.mode == Mode::all_questions) {
    const std::string prompt = build_direct_prompt(config, items);
    std::string response;
    try {
      response = with_retries(options.retry, "direct/__all__", [&] {
        return backend.complete(config.solver, prompt, "__all__");
      });
    } catch (const Error& e) {
      run.failures.push_back({"__all__", e.what()});
      return run;
    }
    const std::string ref = log.append("__all__", config.mode, response);
    std::vector<std::string> ids;
    for (const auto& item : items) ids.push_back(item.id);
    try {
      for (const auto& [id, value] : parse_all_estimates(response, ids)) {
        run.estimates.push_back({id, value, ref});
      }
    } catch (const Error& e) {
      run.failures.push_back({"__all__", e.what()});
    }
    return run;
  }

  std::vector<std::optional<DirectEstimate>> slots(items.size());
  std::vector<std::optional<DirectFailure>> fails(items.size());
  parallel_for(items.size(), options.mode, options.parallelism, [&](std::size_t i) {
    const auto& item = items[i];
    try {
      const std::string prompt = build_direct_prompt(config, {item});
      const std::string response = with_retries(options.retry, "direct/" + item.id, [&] {
        return backend.complete(config.solver, prompt, item.id);
      });
      const std::string ref = log.append(item.id, config.mode, response);
      try {
        slots[i] = DirectEstimate{item.id, parse_single_estimate(response), ref};
      } catch (const Error& e) {
        fails[i] = DirectFailure{item.id, e.what()};
      }
    } catch (const Error& e) {
      fails[i] = DirectFailure{item.id, e.what()};
    }
  });
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (slots[i]) run.estimates.push_back(std::move(*slots[i]));
    if (fails[i]) run.failures.push_back(std::move(*fails[i]));
  }
  return run;
}

}  // namespace diffest::direct
