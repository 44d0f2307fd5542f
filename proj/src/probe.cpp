#include "diffest/probe.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <filesystem>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "diffest/csv.hpp"

namespace diffest::probe {

using nlohmann::json;
namespace fs = std::filesystem;

std::string order_name(ChoiceOrder order) {
  return order == ChoiceOrder::true_first ? "true_false" : "false_true";
}

ChoiceOrder order_from_name(std::string_view name) {
  if (name == "true_false") return ChoiceOrder::true_first;
  if (name == "false_true") return ChoiceOrder::false_first;
  throw Error("unknown choice order: '" + std::string(name) + "'");
}

std::string correct_label(bool correct_answer, ChoiceOrder order) {
  const bool first_is_true = order == ChoiceOrder::true_first;
  return correct_answer == first_is_true ? "A" : "B";
}

std::string format_solver_prompt(const corpus::QuestionItem& item, ChoiceOrder order) {
  const char* first = order == ChoiceOrder::true_first ? "True" : "False";
  const char* second = order == ChoiceOrder::true_first ? "False" : "True";
  std::string prompt;
  prompt += "Decide whether the following statement is true or false.\n\n";
  prompt += "Statement: " + item.text + "\n\n";
  prompt += "A) ";
  prompt += first;
  prompt += "\nB) ";
  prompt += second;
  prompt += "\n\nAnswer with a single letter: A or B.";
  return prompt;
}

namespace {

std::string mock_key(const std::string& solver, const std::string& question_id,
                     ChoiceOrder order) {
  return solver + '\x1f' + question_id + '\x1f' + order_name(order);
}

// Strips whitespace and punctuation, uppercases. "a)" -> "A".
std::string normalize_label(std::string_view token) {
  std::string out;
  for (unsigned char c : token) {
    if (std::isalnum(c)) out += static_cast<char>(std::toupper(c));
  }
  return out;
}

}  // namespace

MockBackend MockBackend::from_json_file(const std::string& path) {
  return from_json_text(read_file(path));
}

MockBackend MockBackend::from_json_text(const std::string& text) {
  MockBackend backend;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("mock fixture: malformed JSON: ") + e.what());
  }
  if (doc.contains("entries")) {
    for (const auto& e : doc["entries"]) {
      backend.add_entry(e.value("solver", ""), e.at("question_id").get<std::string>(),
                        order_from_name(e.at("order").get<std::string>()),
                        e.at("label").get<std::string>(), e.at("logprob").get<double>());
    }
  }
  if (doc.contains("completions")) {
    for (const auto& e : doc["completions"]) {
      backend.add_completion(e.value("solver", ""), e.at("question_id").get<std::string>(),
                             e.at("response").get<std::string>());
    }
  }
  if (doc.contains("unreachable")) {
    for (const auto& s : doc["unreachable"]) backend.set_unreachable(s.get<std::string>());
  }
  if (doc.contains("fail_times")) {
    for (auto it = doc["fail_times"].begin(); it != doc["fail_times"].end(); ++it) {
      backend.set_fail_times(it.key(), it.value().get<int>());
    }
  }
  return backend;
}

void MockBackend::add_entry(const std::string& solver, const std::string& question_id,
                            ChoiceOrder order, const std::string& label, double logprob) {
  entries_[mock_key(solver, question_id, order)] = FirstTokenReply{label, logprob};
}

void MockBackend::add_completion(const std::string& solver, const std::string& question_id,
                                 const std::string& response) {
  completions_[solver + '\x1f' + question_id] = response;
}

void MockBackend::set_unreachable(const std::string& solver) {
  unreachable_.push_back(solver);
}

void MockBackend::set_fail_times(const std::string& solver, int times) {
  fail_times_[solver] = times;
}

long MockBackend::call_count() const {
  std::lock_guard<std::mutex> lock(*mu_);
  return calls_;
}

void MockBackend::reset_call_count() {
  std::lock_guard<std::mutex> lock(*mu_);
  calls_ = 0;
}

FirstTokenReply MockBackend::first_token(const SolverSpec& solver, const SolverQuery& query) {
  std::lock_guard<std::mutex> lock(*mu_);
  ++calls_;
  if (std::find(unreachable_.begin(), unreachable_.end(), solver.name) != unreachable_.end()) {
    throw TransportError("mock: solver '" + solver.name + "' unreachable");
  }
  auto ft = fail_times_.find(solver.name);
  if (ft != fail_times_.end() && ft->second > 0) {
    --ft->second;
    throw TransportError("mock: transient failure for '" + solver.name + "'");
  }
  auto it = entries_.find(mock_key(solver.name, query.question_id, query.order));
  if (it == entries_.end()) {
    it = entries_.find(mock_key("", query.question_id, query.order));
  }
  if (it == entries_.end()) {
    throw Error("mock: no entry for (" + solver.name + ", " + query.question_id + ", " +
                order_name(query.order) + ")");
  }
  return it->second;
}

std::string MockBackend::complete(const SolverSpec& solver, const std::string& /*prompt*/,
                                  const std::string& context_id) {
  std::lock_guard<std::mutex> lock(*mu_);
  ++calls_;
  if (std::find(unreachable_.begin(), unreachable_.end(), solver.name) != unreachable_.end()) {
    throw TransportError("mock: solver '" + solver.name + "' unreachable");
  }
  auto it = completions_.find(solver.name + '\x1f' + context_id);
  if (it == completions_.end()) it = completions_.find('\x1f' + context_id);
  if (it == completions_.end()) {
    throw Error("mock: no completion for (" + solver.name + ", " + context_id + ")");
  }
  return it->second;
}

std::string api_key_env_name(const std::string& solver_name) {
  std::string env = "DIFFEST_API_KEY_";
  for (unsigned char c : solver_name) {
    env += std::isalnum(c) ? static_cast<char>(std::toupper(c)) : '_';
  }
  return env;
}

namespace {

struct Endpoint {
  std::string base;    // scheme://host[:port]
  std::string prefix;  // path prefix, possibly empty
};

Endpoint split_endpoint(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigError("endpoint_url must include a scheme: '" + url + "'");
  }
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, ""};
  return {url.substr(0, path_start), url.substr(path_start)};
}

json chat_request_body(const SolverSpec& solver, const std::string& prompt, bool logprobs) {
  json body;
  body["model"] = solver.model_id;
  body["messages"] = json::array({json{{"role", "user"}, {"content", prompt}}});
  body["temperature"] = solver.temperature;
  body["max_tokens"] = solver.max_tokens;
  if (logprobs) {
    body["logprobs"] = true;
    body["top_logprobs"] = 5;
  }
  return body;
}

json post_chat(const SolverSpec& solver, const json& body) {
  const Endpoint ep = split_endpoint(solver.endpoint_url);
  httplib::Client client(ep.base);
  const auto timeout_s = solver.request_timeout.count() / 1000;
  const auto timeout_us = (solver.request_timeout.count() % 1000) * 1000;
  client.set_connection_timeout(timeout_s, timeout_us);
  client.set_read_timeout(timeout_s, timeout_us);

  httplib::Headers headers;
  if (const char* key = std::getenv(api_key_env_name(solver.name).c_str())) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  auto res = client.Post(ep.prefix + "/chat/completions", headers, body.dump(),
                         "application/json");
  if (!res) {
    throw TransportError("solver '" + solver.name + "': " + httplib::to_string(res.error()));
  }
  if (res->status == 429 || res->status >= 500) {
    throw TransportError("solver '" + solver.name + "': HTTP " + std::to_string(res->status));
  }
  if (res->status != 200) {
    throw Error("solver '" + solver.name + "': HTTP " + std::to_string(res->status) + ": " +
                res->body);
  }
  try {
    return json::parse(res->body);
  } catch (const json::exception& e) {
    throw Error("solver '" + solver.name + "': malformed response JSON: " + e.what());
  }
}

}  // namespace

FirstTokenReply HttpBackend::first_token(const SolverSpec& solver, const SolverQuery& query) {
  const json reply = post_chat(solver, chat_request_body(solver, query.prompt, true));
  if (!reply.contains("choices") || reply["choices"].empty()) {
    throw Error("solver '" + solver.name + "': response has no choices");
  }
  const json& choice = reply["choices"][0];
  if (!choice.contains("logprobs") || choice["logprobs"].is_null() ||
      !choice["logprobs"].contains("content") || choice["logprobs"]["content"].empty()) {
    throw Error("solver '" + solver.name + "': response lacks log-probabilities");
  }
  const json& first = choice["logprobs"]["content"][0];
  FirstTokenReply out;
  out.token = first.at("token").get<std::string>();
  if (first.contains("logprob")) {
    out.logprob = first["logprob"].get<double>();
    return out;
  }
  // Fall back to the top_logprobs table; the chosen token must appear there.
  if (first.contains("top_logprobs")) {
    for (const auto& cand : first["top_logprobs"]) {
      if (cand.at("token").get<std::string>() == out.token) {
        out.logprob = cand.at("logprob").get<double>();
        return out;
      }
    }
  }
  throw Error("solver '" + solver.name + "': no log-probability entry for chosen token '" +
              out.token + "'");
}

std::string HttpBackend::complete(const SolverSpec& solver, const std::string& prompt,
                                  const std::string& /*context_id*/) {
  const json reply = post_chat(solver, chat_request_body(solver, prompt, false));
  if (!reply.contains("choices") || reply["choices"].empty()) {
    throw Error("solver '" + solver.name + "': response has no choices");
  }
  const json& msg = reply["choices"][0].at("message");
  return msg.at("content").get<std::string>();
}

namespace {

PermutationOutcome interpret_reply(const FirstTokenReply& reply, ChoiceOrder order,
                                   bool correct_answer, const std::string& solver_name) {
  const std::string label = normalize_label(reply.token);
  if (label != "A" && label != "B") {
    throw Error("solver '" + solver_name + "': first token '" + reply.token +
                "' is not a recognized answer label");
  }
  if (reply.logprob > 0.0) {
    throw Error("solver '" + solver_name + "': positive log-probability " +
                format_double(reply.logprob));
  }
  PermutationOutcome out;
  out.order = order;
  out.chosen_label = label;
  out.chosen_is_correct = label == correct_label(correct_answer, order);
  out.first_token_probability = std::exp(reply.logprob);
  return out;
}

}  // namespace

PermutationOutcome solve_once(SolverBackend& backend, const SolverSpec& solver,
                              const SolverQuery& query, bool correct_answer) {
  const FirstTokenReply reply = backend.first_token(solver, query);
  return interpret_reply(reply, query.order, correct_answer, solver.name);
}

double choice_order_sensitivity(const std::vector<PermutationOutcome>& outcomes) {
  if (outcomes.empty()) throw Error("choice_order_sensitivity: empty outcome list");
  std::size_t correct = 0;
  for (const auto& o : outcomes) {
    if (o.chosen_is_correct) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(outcomes.size());
}

CacheStore::CacheStore(const std::string& dir) : dir_(dir) {
  if (!dir_.empty()) fs::create_directories(dir_);
}

std::string CacheStore::key_path(const std::string& key) const {
  return (fs::path(dir_) / (hex64(fnv1a64(key)) + ".json")).string();
}

std::optional<FirstTokenReply> CacheStore::load(const std::string& solver,
                                                const std::string& question_id,
                                                ChoiceOrder order) {
  const std::string key = mock_key(solver, question_id, order);
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = memory_.find(key);
    if (it != memory_.end()) return it->second;
  }
  if (dir_.empty()) return std::nullopt;
  const std::string path = key_path(key);
  if (!fs::exists(path)) return std::nullopt;
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error("cache entry " + path + ": malformed JSON: " + e.what());
  }
  if (doc.value("solver", "") != solver || doc.value("question_id", "") != question_id ||
      doc.value("order", "") != order_name(order)) {
    throw Error("cache entry " + path + ": key mismatch, delete the cache directory");
  }
  FirstTokenReply reply{doc.at("token").get<std::string>(), doc.at("logprob").get<double>()};
  std::lock_guard<std::mutex> lock(mu_);
  memory_[key] = reply;
  return reply;
}

void CacheStore::store(const std::string& solver, const std::string& question_id,
                       ChoiceOrder order, const FirstTokenReply& reply) {
  const std::string key = mock_key(solver, question_id, order);
  std::lock_guard<std::mutex> lock(mu_);
  memory_[key] = reply;
  if (dir_.empty()) return;
  json doc;
  doc["solver"] = solver;
  doc["question_id"] = question_id;
  doc["order"] = order_name(order);
  doc["token"] = reply.token;
  doc["logprob"] = reply.logprob;
  write_file(key_path(key), doc.dump() + "\n");
}

ProbeResult probe_bank(const corpus::QuestionBank& bank, const std::vector<SolverSpec>& ensemble,
                       SolverBackend& backend, CacheStore& cache, const ProbeOptions& options) {
  if (ensemble.empty()) throw Error("probe_bank: empty solver ensemble");
  {
    std::vector<std::string> names;
    for (const auto& s : ensemble) names.push_back(s.name);
    std::sort(names.begin(), names.end());
    if (std::adjacent_find(names.begin(), names.end()) != names.end()) {
      throw Error("probe_bank: duplicate solver name in ensemble");
    }
  }
  const auto items = corpus::active_items(bank);

  struct Pair {
    const corpus::QuestionItem* item;
    const SolverSpec* solver;
  };
  std::vector<Pair> pairs;
  for (const auto& item : items) {
    for (const auto& solver : ensemble) pairs.push_back({&item, &solver});
  }

  std::vector<std::optional<UncertaintySignals>> slots(pairs.size());
  std::vector<std::optional<ProbeFailure>> fails(pairs.size());

  parallel_for(pairs.size(), options.mode, options.parallelism, [&](std::size_t idx) {
    const auto& [item, solver] = pairs[idx];
    try {
      UncertaintySignals sig;
      sig.question_id = item->id;
      sig.solver_name = solver->name;
      for (ChoiceOrder order : kAllOrders) {
        FirstTokenReply reply;
        if (auto cached = cache.load(solver->name, item->id, order)) {
          reply = *cached;
        } else {
          SolverQuery query{item->id, order, format_solver_prompt(*item, order)};
          const std::string tag = solver->name + "/" + item->id + "/" + order_name(order);
          reply = with_retries(options.retry, tag,
                               [&] { return backend.first_token(*solver, query); });
          cache.store(solver->name, item->id, order, reply);
        }
        sig.outcomes.push_back(interpret_reply(reply, order, item->correct_answer, solver->name));
      }
      sig.first_token_probability = sig.outcomes[0].first_token_probability;
      sig.choice_order_sensitivity = choice_order_sensitivity(sig.outcomes);
      slots[idx] = std::move(sig);
    } catch (const Error& e) {
      fails[idx] = ProbeFailure{solver->name, item->id, e.what()};
    }
  });

  ProbeResult result;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (slots[i]) result.signals.push_back(std::move(*slots[i]));
    if (fails[i]) result.failures.push_back(std::move(*fails[i]));
  }
  return result;
}

std::string signals_to_csv(const std::vector<UncertaintySignals>& signals) {
  std::string out = "question_id,solver,first_token_prob,choice_order_sensitivity\n";
  for (const auto& s : signals) {
    out += csv::encode_row({s.question_id, s.solver_name, format_double(s.first_token_probability),
                            format_double(s.choice_order_sensitivity)});
  }
  return out;
}

std::vector<UncertaintySignals> signals_from_csv_file(const std::string& path) {
  const csv::Table table = csv::read_file(path);
  const std::vector<std::string> expected = {"question_id", "solver", "first_token_prob",
                                             "choice_order_sensitivity"};
  if (table.header != expected) throw Error(path + ": unexpected signals CSV header");
  std::vector<UncertaintySignals> out;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    if (row.size() != 4) {
      throw Error(path + ": row " + std::to_string(i + 2) + ": expected 4 fields");
    }
    UncertaintySignals s;
    s.question_id = row[0];
    s.solver_name = row[1];
    s.first_token_probability = parse_double(row[2], path);
    s.choice_order_sensitivity = parse_double(row[3], path);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace diffest::probe
