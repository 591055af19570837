#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace peftlab::metrics {

/// Counts indexed [true class][predicted class].
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t n_classes);
  static ConfusionMatrix from_predictions(std::size_t n_classes, std::span<const int> truth,
                                          std::span<const int> predicted);
  static ConfusionMatrix from_counts(const std::vector<std::vector<std::size_t>>& counts);

  void add(int truth, int predicted, std::size_t count = 1);
  std::size_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * n_ + predicted]; }
  std::size_t n_classes() const { return n_; }
  std::size_t total() const;
  std::size_t trace() const;
  std::size_t row_sum(std::size_t c) const;
  std::size_t col_sum(std::size_t c) const;
  std::vector<std::vector<std::size_t>> rows() const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t n_;
  std::vector<std::size_t> counts_;
};

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

// All three throw DataError on an empty matrix.
double accuracy(const ConfusionMatrix& cm);
double f1_micro(const ConfusionMatrix& cm);
// Classes with neither true nor predicted instances count as F1 = 0.
double f1_macro(const ConfusionMatrix& cm);
// Undefined precision or recall (zero denominator) is reported as 0.
std::vector<ClassMetrics> per_class(const ConfusionMatrix& cm);

struct MetricsReport {
  std::vector<std::string> labels;
  double f1_micro = 0.0;
  double f1_macro = 0.0;
  std::vector<ClassMetrics> classes;
  ConfusionMatrix confusion{1};
  std::optional<std::size_t> fold_id;
};

MetricsReport make_report(std::vector<std::string> labels, const ConfusionMatrix& cm,
                          std::optional<std::size_t> fold_id = std::nullopt);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single value
};

MeanStd mean_std(std::span<const double> values);

struct AggregateReport {
  std::vector<std::string> labels;
  std::size_t n_folds = 0;
  MeanStd f1_micro;
  MeanStd f1_macro;
  std::vector<MeanStd> class_f1;
};

// Throws DataError for an empty list or reports over different label sets.
AggregateReport aggregate_folds(std::span<const MetricsReport> reports);

nlohmann::ordered_json to_json(const ConfusionMatrix& cm);
nlohmann::ordered_json to_json(const MetricsReport& report);
nlohmann::ordered_json to_json(const AggregateReport& report);
MetricsReport report_from_json(const nlohmann::ordered_json& j);

/// Technique-by-dataset score table. Missing cells render empty, failed cells
/// as "ERROR".
struct ResultTable {
  struct Cell {
    std::optional<double> value;
    bool error = false;
  };
  std::vector<std::string> columns;
  std::vector<std::string> row_names;
  std::vector<std::vector<Cell>> cells;  // [row][column]

  ResultTable(std::vector<std::string> row_names, std::vector<std::string> columns);
  void set(std::size_t row, std::size_t col, double value);
  void set_error(std::size_t row, std::size_t col);
  std::size_t error_count() const;
};

// F1 values are printed as percentages with one decimal.
std::string render_markdown(const ResultTable& table, const std::string& corner = "Technique");
nlohmann::ordered_json to_json(const ResultTable& table);

}  // namespace peftlab::metrics
