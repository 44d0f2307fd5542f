#include "diffest/features.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>

#include "diffest/csv.hpp"

namespace diffest::features {

namespace {

bool is_token_char(unsigned char c) {
  // Bytes >= 0x80 keep multi-byte UTF-8 words intact.
  return std::isalnum(c) || c >= 0x80;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (c == '\\' && i + 1 < n && std::isalpha(static_cast<unsigned char>(text[i + 1]))) {
      std::size_t j = i + 1;
      while (j < n && std::isalpha(static_cast<unsigned char>(text[j]))) ++j;
      tokens.push_back(to_lower(text.substr(i + 1, j - i - 1)));
      i = j;
    } else if (is_token_char(c)) {
      std::size_t j = i;
      while (j < n && is_token_char(static_cast<unsigned char>(text[j]))) ++j;
      tokens.push_back(to_lower(text.substr(i, j - i)));
      i = j;
    } else {
      ++i;
    }
  }
  return tokens;
}

TfidfModel fit_tfidf(const std::vector<std::string>& train_texts) {
  if (train_texts.empty()) throw Error("fit_tfidf: empty training corpus");
  std::map<std::string, std::size_t> df;  // token -> document frequency
  for (const auto& text : train_texts) {
    std::set<std::string> seen;
    for (auto& tok : tokenize(text)) seen.insert(std::move(tok));
    for (const auto& tok : seen) ++df[tok];
  }
  if (df.empty()) throw Error("fit_tfidf: corpus tokenizes to an empty vocabulary");

  TfidfModel model;
  model.fitted_on = train_texts.size();
  const double n_docs = static_cast<double>(train_texts.size());
  for (const auto& [tok, count] : df) {
    model.index.emplace(tok, model.vocabulary.size());
    model.vocabulary.push_back(tok);
    model.idf.push_back(std::log((1.0 + n_docs) / (1.0 + static_cast<double>(count))) + 1.0);
  }
  return model;
}

FeatureMatrix transform_tfidf(const TfidfModel& model, const std::vector<std::string>& texts,
                              const std::vector<std::string>& row_ids, ExecMode mode) {
  if (model.vocabulary.empty()) throw Error("transform_tfidf: model not fitted");
  if (texts.size() != row_ids.size()) throw Error("transform_tfidf: texts/row_ids mismatch");

  FeatureMatrix out;
  out.row_ids = row_ids;
  for (const auto& tok : model.vocabulary) out.column_names.push_back("t:" + tok);
  out.values = linalg::Matrix(texts.size(), model.vocabulary.size());

  parallel_for(texts.size(), mode, [&](std::size_t r) {
    double* row = out.values.row(r);
    for (const auto& tok : tokenize(texts[r])) {
      auto it = model.index.find(tok);
      if (it != model.index.end()) row[it->second] += model.idf[it->second];
    }
    double norm2 = 0.0;
    for (std::size_t c = 0; c < model.vocabulary.size(); ++c) norm2 += row[c] * row[c];
    if (norm2 > 0.0) {
      const double inv = 1.0 / std::sqrt(norm2);
      for (std::size_t c = 0; c < model.vocabulary.size(); ++c) row[c] *= inv;
    }
  });
  return out;
}

std::string feature_mode_name(FeatureMode mode) {
  switch (mode) {
    case FeatureMode::uncertainty: return "uncertainty";
    case FeatureMode::tfidf: return "tfidf";
    case FeatureMode::both: return "both";
  }
  return "uncertainty";
}

FeatureMode feature_mode_from_name(std::string_view name) {
  if (name == "uncertainty") return FeatureMode::uncertainty;
  if (name == "tfidf") return FeatureMode::tfidf;
  if (name == "both") return FeatureMode::both;
  throw Error("unknown feature mode: '" + std::string(name) + "'");
}

std::string feature_mode_display(FeatureMode mode) {
  switch (mode) {
    case FeatureMode::uncertainty: return "LLM Uncertainties";
    case FeatureMode::tfidf: return "TF-IDF";
    case FeatureMode::both: return "TF-IDF & Uncertainties";
  }
  return "?";
}

FeatureMatrix assemble(FeatureMode mode, const std::vector<probe::UncertaintySignals>& signals,
                       const std::optional<FeatureMatrix>& tfidf,
                       const std::vector<std::string>& question_order) {
  FeatureMatrix out;
  out.row_ids = question_order;

  std::vector<std::vector<double>> blocks(question_order.size());

  if (mode == FeatureMode::uncertainty || mode == FeatureMode::both) {
    std::set<std::string> solver_set;
    std::map<std::pair<std::string, std::string>, const probe::UncertaintySignals*> by_key;
    for (const auto& s : signals) {
      solver_set.insert(s.solver_name);
      by_key[{s.question_id, s.solver_name}] = &s;
    }
    if (solver_set.empty()) throw Error("assemble: no uncertainty signals provided");
    for (const auto& solver : solver_set) {
      out.column_names.push_back("u:" + solver + ":first_token_prob");
      out.column_names.push_back("u:" + solver + ":order_sensitivity");
    }
    for (std::size_t r = 0; r < question_order.size(); ++r) {
      for (const auto& solver : solver_set) {
        auto it = by_key.find({question_order[r], solver});
        if (it == by_key.end()) {
          throw Error("assemble: missing signals for (" + question_order[r] + ", " + solver +
                      ")");
        }
        blocks[r].push_back(it->second->first_token_probability);
        blocks[r].push_back(it->second->choice_order_sensitivity);
      }
    }
  }

  if (mode == FeatureMode::tfidf || mode == FeatureMode::both) {
    if (!tfidf) throw Error("assemble: TF-IDF matrix required for mode " +
                            feature_mode_name(mode));
    if (tfidf->row_ids != question_order) {
      throw Error("assemble: TF-IDF row order does not match question order");
    }
    for (const auto& name : tfidf->column_names) out.column_names.push_back(name);
    for (std::size_t r = 0; r < question_order.size(); ++r) {
      const double* row = tfidf->values.row(r);
      blocks[r].insert(blocks[r].end(), row, row + tfidf->values.cols);
    }
  }

  {
    std::set<std::string> unique(out.column_names.begin(), out.column_names.end());
    if (unique.size() != out.column_names.size()) {
      throw Error("assemble: duplicate column names");
    }
  }

  out.values = linalg::Matrix(question_order.size(), out.column_names.size());
  for (std::size_t r = 0; r < question_order.size(); ++r) {
    std::copy(blocks[r].begin(), blocks[r].end(), out.values.row(r));
  }
  return out;
}

FeatureMatrix select_rows(const FeatureMatrix& m, const std::vector<std::string>& ids) {
  std::map<std::string, std::size_t> row_of;
  for (std::size_t r = 0; r < m.row_ids.size(); ++r) row_of[m.row_ids[r]] = r;
  FeatureMatrix out;
  out.row_ids = ids;
  out.column_names = m.column_names;
  out.values = linalg::Matrix(ids.size(), m.values.cols);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    auto it = row_of.find(ids[r]);
    if (it == row_of.end()) throw Error("select_rows: unknown row id '" + ids[r] + "'");
    std::copy(m.values.row(it->second), m.values.row(it->second) + m.values.cols,
              out.values.row(r));
  }
  return out;
}

void save_csv(const FeatureMatrix& m, const std::string& path) {
  csv::Table table;
  table.header.push_back("question_id");
  for (const auto& c : m.column_names) table.header.push_back(c);
  for (std::size_t r = 0; r < m.row_ids.size(); ++r) {
    std::vector<std::string> row;
    row.push_back(m.row_ids[r]);
    for (std::size_t c = 0; c < m.values.cols; ++c) {
      row.push_back(format_double(m.values.at(r, c)));
    }
    table.rows.push_back(std::move(row));
  }
  csv::write_file(path, table);
}

FeatureMatrix load_csv(const std::string& path) {
  const csv::Table table = csv::read_file(path);
  if (table.header.empty() || table.header[0] != "question_id") {
    throw Error(path + ": feature CSV must start with a question_id column");
  }
  FeatureMatrix m;
  m.column_names.assign(table.header.begin() + 1, table.header.end());
  m.values = linalg::Matrix(table.rows.size(), m.column_names.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    if (row.size() != table.header.size()) {
      throw Error(path + ": row " + std::to_string(r + 2) + ": field count mismatch");
    }
    m.row_ids.push_back(row[0]);
    for (std::size_t c = 0; c < m.column_names.size(); ++c) {
      m.values.at(r, c) = parse_double(row[c + 1], path);
    }
  }
  return m;
}

}  // namespace diffest::features
