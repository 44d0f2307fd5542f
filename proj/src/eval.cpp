#include "diffest/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "diffest/csv.hpp"

namespace diffest::eval {

namespace {

void check_paired(const std::vector<double>& pred, const std::vector<double>& truth,
                  const char* op) {
  if (pred.size() != truth.size()) {
    throw Error(std::string(op) + ": length mismatch (" + std::to_string(pred.size()) + " vs " +
                std::to_string(truth.size()) + ")");
  }
  if (pred.empty()) throw Error(std::string(op) + ": empty input");
}

// Fractional (average) ranks, 1-based.
std::vector<double> fractional_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  if (va == 0.0 || vb == 0.0) throw Error("spearman_rho: constant input vector");
  return cov / std::sqrt(va * vb);
}

}  // namespace

double rmse(const std::vector<double>& pred, const std::vector<double>& truth) {
  check_paired(pred, truth, "rmse");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - truth[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(pred.size()));
}

double mean_error(const std::vector<double>& pred, const std::vector<double>& truth) {
  check_paired(pred, truth, "mean_error");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += pred[i] - truth[i];
  return s / static_cast<double>(pred.size());
}

double spearman_rho(const std::vector<double>& a, const std::vector<double>& b) {
  check_paired(a, b, "spearman_rho");
  if (a.size() < 2) throw Error("spearman_rho: need at least 2 pairs");
  return pearson(fractional_ranks(a), fractional_ranks(b));
}

EvaluationMetrics evaluate(const EstimateSeries& series,
                           const std::vector<corpus::GroundTruth>& truth) {
  std::vector<double> pred, actual;
  for (const auto& gt : truth) {
    auto it = series.estimates.find(gt.question_id);
    if (it == series.estimates.end()) continue;
    pred.push_back(it->second);
    actual.push_back(gt.p_plus);
  }
  if (pred.size() < 2) {
    throw Error("evaluate('" + series.name + "'): needs at least 2 overlapping questions, got " +
                std::to_string(pred.size()));
  }
  EvaluationMetrics m;
  m.n_evaluated = pred.size();
  m.rmse = rmse(pred, actual);
  m.mean_error = mean_error(pred, actual);
  try {
    m.spearman_rho = spearman_rho(pred, actual);
  } catch (const Error&) {
    m.spearman_rho = std::nullopt;
  }
  return m;
}

EstimateSeries average_series(const std::vector<EstimateSeries>& series_list) {
  if (series_list.size() < 2) throw Error("average_series: need at least 2 series");
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (const auto& s : series_list) {
    for (const auto& [qid, v] : s.estimates) {
      auto& a = acc[qid];
      a.first += v;
      a.second += 1;
    }
  }
  EstimateSeries out;
  out.name = "average";
  for (const auto& [qid, a] : acc) {
    out.estimates[qid] = a.first / static_cast<double>(a.second);
  }
  return out;
}

AgreementMatrix agreement_matrix(const std::vector<EstimateSeries>& series_list) {
  const std::size_t n = series_list.size();
  AgreementMatrix m;
  for (const auto& s : series_list) m.names.push_back(s.name);
  m.rho = linalg::Matrix(n, n);
  m.defined.assign(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    m.rho.at(i, i) = 1.0;
    m.defined[i * n + i] = 1;
    for (std::size_t j = i + 1; j < n; ++j) {
      std::vector<double> a, b;
      for (const auto& [qid, v] : series_list[i].estimates) {
        auto it = series_list[j].estimates.find(qid);
        if (it == series_list[j].estimates.end()) continue;
        a.push_back(v);
        b.push_back(it->second);
      }
      try {
        const double rho = spearman_rho(a, b);
        m.rho.at(i, j) = rho;
        m.rho.at(j, i) = rho;
        m.defined[i * n + j] = 1;
        m.defined[j * n + i] = 1;
      } catch (const Error&) {
        // Undefined cell: too little overlap or constant estimates.
      }
    }
  }
  return m;
}

PerQuestionTable per_question_table(const std::vector<corpus::GroundTruth>& truth,
                                    const std::vector<EstimateSeries>& series_list,
                                    const std::map<std::string, std::string>& split_labels) {
  PerQuestionTable t;
  for (const auto& s : series_list) t.series_names.push_back(s.name);
  for (const auto& gt : truth) {
    PerQuestionRow row;
    row.question_id = gt.question_id;
    row.p_plus = gt.p_plus;
    auto sl = split_labels.find(gt.question_id);
    if (sl != split_labels.end()) row.split_label = sl->second;
    for (const auto& s : series_list) {
      auto it = s.estimates.find(gt.question_id);
      if (it != s.estimates.end()) row.estimates.emplace_back(it->second);
      else row.estimates.emplace_back(std::nullopt);
    }
    t.rows.push_back(std::move(row));
  }
  std::stable_sort(t.rows.begin(), t.rows.end(),
                   [](const PerQuestionRow& a, const PerQuestionRow& b) {
                     return a.p_plus > b.p_plus;
                   });
  return t;
}

EstimateSeries load_estimator_csv(const std::string& path, const std::string& name) {
  const csv::Table table = csv::read_file(path);
  if (table.header.size() != 2 || table.header[0] != "question_id" ||
      table.header[1] != "estimate_percent") {
    throw Error(path + ": estimator CSV must have header question_id,estimate_percent");
  }
  EstimateSeries series;
  series.name = name;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    if (row.size() != 2) {
      throw Error(path + ": row " + std::to_string(i + 2) + ": expected 2 fields");
    }
    const std::string value = trim(row[1]);
    if (value.empty()) continue;  // declined
    const double percent = parse_double(value, path + " row " + std::to_string(i + 2));
    if (percent < 0.0 || percent > 100.0) {
      throw Error(path + ": row " + std::to_string(i + 2) + ": estimate " + value +
                  " outside 0-100");
    }
    series.estimates[row[0]] = percent / 100.0;
  }
  return series;
}

void save_estimator_csv(const EstimateSeries& series, const std::string& path) {
  csv::Table table;
  table.header = {"question_id", "estimate_percent"};
  for (const auto& [qid, v] : series.estimates) {
    table.rows.push_back({qid, format_double(v * 100.0)});
  }
  csv::write_file(path, table);
}

namespace {

std::string metric_cell(const ReportRow& row, char which) {
  if (row.is_dummy && (which == 'm' || which == 'r')) return "-";
  switch (which) {
    case 'e': return format_fixed3(row.metrics.rmse);
    case 'm': return format_fixed3(row.metrics.mean_error);
    case 'r':
      return row.metrics.spearman_rho ? format_fixed3(*row.metrics.spearman_rho) : "-";
  }
  return "-";
}

}  // namespace

std::string render_metrics_markdown(const std::vector<ReportRow>& rows,
                                    const std::string& title) {
  std::string out;
  if (!title.empty()) out += "# " + title + "\n\n";
  out += "| Method | Features | RMSE | ME | rho | n |\n";
  out += "|---|---|---:|---:|---:|---:|\n";
  for (const auto& row : rows) {
    out += "| " + row.method + " | " + (row.features.empty() ? "-" : row.features) + " | " +
           metric_cell(row, 'e') + " | " + metric_cell(row, 'm') + " | " +
           metric_cell(row, 'r') + " | " + std::to_string(row.metrics.n_evaluated) + " |\n";
  }
  return out;
}

std::string render_metrics_csv(const std::vector<ReportRow>& rows) {
  std::string out = "method,features,rmse,me,rho,n\n";
  for (const auto& row : rows) {
    out += csv::encode_row({row.method, row.features, metric_cell(row, 'e'),
                            metric_cell(row, 'm'), metric_cell(row, 'r'),
                            std::to_string(row.metrics.n_evaluated)});
  }
  return out;
}

std::string render_agreement_csv(const AgreementMatrix& m) {
  std::vector<std::string> header = {"series"};
  header.insert(header.end(), m.names.begin(), m.names.end());
  std::string out = csv::encode_row(header);
  const std::size_t n = m.names.size();
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::string> row = {m.names[i]};
    for (std::size_t j = 0; j < n; ++j) {
      row.push_back(m.defined[i * n + j] ? format_fixed3(m.rho.at(i, j)) : "");
    }
    out += csv::encode_row(row);
  }
  return out;
}

std::string render_scatter_svg(const std::string& title,
                               const std::vector<std::pair<double, double>>& truth_estimate) {
  constexpr int size = 440;
  constexpr int margin = 40;
  constexpr int plot = size - 2 * margin;
  auto px = [&](double v) { return margin + v * plot; };
  auto py = [&](double v) { return size - margin - v * plot; };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(size) +
         "\" height=\"" + std::to_string(size) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + std::to_string(size / 2) + "\" y=\"20\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"14\">" + title + "</text>\n";
  svg += "<rect x=\"" + std::to_string(margin) + "\" y=\"" + std::to_string(margin) +
         "\" width=\"" + std::to_string(plot) + "\" height=\"" + std::to_string(plot) +
         "\" fill=\"none\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + format_fixed3(px(0)) + "\" y1=\"" + format_fixed3(py(0)) + "\" x2=\"" +
         format_fixed3(px(1)) + "\" y2=\"" + format_fixed3(py(1)) +
         "\" stroke=\"#999\" stroke-dasharray=\"4 4\"/>\n";
  for (const auto& [truth, estimate] : truth_estimate) {
    svg += "<circle cx=\"" + format_fixed3(px(truth)) + "\" cy=\"" + format_fixed3(py(estimate)) +
           "\" r=\"3\" fill=\"#2060c0\" fill-opacity=\"0.7\"/>\n";
  }
  svg += "<text x=\"" + std::to_string(size / 2) + "\" y=\"" + std::to_string(size - 8) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">true p+"
         "</text>\n";
  svg += "<text x=\"12\" y=\"" + std::to_string(size / 2) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
         "transform=\"rotate(-90 12 " + std::to_string(size / 2) + ")\">estimate</text>\n";
  svg += "</svg>\n";
  return svg;
}

std::string render_per_question_csv(const PerQuestionTable& t) {
  std::vector<std::string> header = {"question_id", "p_plus", "split"};
  header.insert(header.end(), t.series_names.begin(), t.series_names.end());
  std::string out = csv::encode_row(header);
  for (const auto& row : t.rows) {
    std::vector<std::string> fields = {row.question_id, format_double(row.p_plus),
                                       row.split_label};
    for (const auto& est : row.estimates) {
      fields.push_back(est ? format_double(*est) : "");
    }
    out += csv::encode_row(fields);
  }
  return out;
}

}  // namespace diffest::eval
