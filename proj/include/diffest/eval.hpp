#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "diffest/corpus.hpp"
#include "diffest/linalg.hpp"

namespace diffest::eval {

// A named set of difficulty estimates in [0,1]. A missing question id means
// the estimator declined on that question.
struct EstimateSeries {
  std::string name;
  std::map<std::string, double> estimates;
};

struct EvaluationMetrics {
  double rmse = 0.0;
  double mean_error = 0.0;
  std::optional<double> spearman_rho;  // absent when rank correlation is undefined
  std::size_t n_evaluated = 0;
};

double rmse(const std::vector<double>& pred, const std::vector<double>& truth);
double mean_error(const std::vector<double>& pred, const std::vector<double>& truth);

// Pearson correlation of fractional-rank transforms. Ties get average ranks.
// Throws when either vector is constant.
double spearman_rho(const std::vector<double>& a, const std::vector<double>& b);

// Pairwise-dropped evaluation: only questions with both an estimate and a
// truth value count. rmse/mean_error are always reported; rho may be absent.
EvaluationMetrics evaluate(const EstimateSeries& series,
                           const std::vector<corpus::GroundTruth>& truth);

// Per question, the mean of the present estimates; absent only where all
// inputs decline.
EstimateSeries average_series(const std::vector<EstimateSeries>& series_list);

struct AgreementMatrix {
  std::vector<std::string> names;
  linalg::Matrix rho;                // square, symmetric where defined
  std::vector<std::uint8_t> defined; // row-major mask
};

AgreementMatrix agreement_matrix(const std::vector<EstimateSeries>& series_list);

struct PerQuestionRow {
  std::string question_id;
  double p_plus = 0.0;
  std::string split_label;  // "train", "test", or empty
  std::vector<std::optional<double>> estimates;  // one per series
};

struct PerQuestionTable {
  std::vector<std::string> series_names;
  std::vector<PerQuestionRow> rows;  // sorted by p_plus descending
};

PerQuestionTable per_question_table(const std::vector<corpus::GroundTruth>& truth,
                                    const std::vector<EstimateSeries>& series_list,
                                    const std::map<std::string, std::string>& split_labels);

// Estimator files: "question_id,estimate_percent", estimates 0-100, blank
// estimate = declined. Values are normalized to [0,1] on load.
EstimateSeries load_estimator_csv(const std::string& path, const std::string& name);
void save_estimator_csv(const EstimateSeries& series, const std::string& path);

// One metrics-table row. Dummy rows render ME and rho as "-".
struct ReportRow {
  std::string method;
  std::string features;
  EvaluationMetrics metrics;
  bool is_dummy = false;
};

std::string render_metrics_markdown(const std::vector<ReportRow>& rows,
                                    const std::string& title);
std::string render_metrics_csv(const std::vector<ReportRow>& rows);
std::string render_agreement_csv(const AgreementMatrix& m);
std::string render_per_question_csv(const PerQuestionTable& t);

// Estimates vs truth on the unit square, with the identity diagonal.
std::string render_scatter_svg(const std::string& title,
                               const std::vector<std::pair<double, double>>& truth_estimate);

}  // namespace diffest::eval
