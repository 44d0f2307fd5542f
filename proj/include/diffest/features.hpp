#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "diffest/linalg.hpp"
#include "diffest/parallel.hpp"
#include "diffest/probe.hpp"

namespace diffest::features {

// Lowercases and splits on whitespace/punctuation. A LaTeX command "\foo"
// yields the token "foo"; bare math symbols vanish as separators.
std::vector<std::string> tokenize(std::string_view text);

struct TfidfModel {
  std::vector<std::string> vocabulary;  // sorted; index = column
  std::unordered_map<std::string, std::size_t> index;
  std::vector<double> idf;
  std::size_t fitted_on = 0;
};

// Smoothed idf: ln((1+N)/(1+df)) + 1. Vocabulary comes from these texts only.
TfidfModel fit_tfidf(const std::vector<std::string>& train_texts);

// Row-per-question feature matrix with provenance-labeled columns.
struct FeatureMatrix {
  std::vector<std::string> row_ids;
  std::vector<std::string> column_names;
  linalg::Matrix values;
};

// term_count * idf per column, then L2 row normalization. Unseen tokens are
// ignored; all-zero rows stay zero.
FeatureMatrix transform_tfidf(const TfidfModel& model, const std::vector<std::string>& texts,
                              const std::vector<std::string>& row_ids,
                              ExecMode mode = ExecMode::serial);

enum class FeatureMode { uncertainty, tfidf, both };

std::string feature_mode_name(FeatureMode mode);
FeatureMode feature_mode_from_name(std::string_view name);
// Report-facing label, e.g. "TF-IDF & Uncertainties".
std::string feature_mode_display(FeatureMode mode);

// Uncertainty block: two columns per solver, solvers in sorted name order.
// "both" is the uncertainty block followed by the TF-IDF block.
FeatureMatrix assemble(FeatureMode mode, const std::vector<probe::UncertaintySignals>& signals,
                       const std::optional<FeatureMatrix>& tfidf,
                       const std::vector<std::string>& question_order);

// Restriction of a matrix to a subset of its rows, preserving `ids` order.
FeatureMatrix select_rows(const FeatureMatrix& m, const std::vector<std::string>& ids);

void save_csv(const FeatureMatrix& m, const std::string& path);
FeatureMatrix load_csv(const std::string& path);

}  // namespace diffest::features
