#include "peftlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "peftlab/errors.hpp"

namespace peftlab::metrics {

namespace {

void require_nonempty(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw DataError("confusion matrix is empty");
}

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * v);
  return buf;
}

}  // namespace

ConfusionMatrix::ConfusionMatrix(std::size_t n_classes) : n_(n_classes), counts_(n_classes * n_classes, 0) {
  if (n_classes == 0) throw DimensionError("confusion matrix needs at least one class");
}

ConfusionMatrix ConfusionMatrix::from_predictions(std::size_t n_classes, std::span<const int> truth,
                                                  std::span<const int> predicted) {
  if (truth.size() != predicted.size()) {
    throw DimensionError("got " + std::to_string(truth.size()) + " labels but " +
                         std::to_string(predicted.size()) + " predictions");
  }
  ConfusionMatrix cm(n_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
  return cm;
}

ConfusionMatrix ConfusionMatrix::from_counts(const std::vector<std::vector<std::size_t>>& counts) {
  ConfusionMatrix cm(counts.size());
  for (std::size_t t = 0; t < counts.size(); ++t) {
    if (counts[t].size() != counts.size()) throw DimensionError("confusion matrix must be square");
    for (std::size_t p = 0; p < counts.size(); ++p) cm.counts_[t * cm.n_ + p] = counts[t][p];
  }
  return cm;
}

void ConfusionMatrix::add(int truth, int predicted, std::size_t count) {
  const auto n = static_cast<int>(n_);
  if (truth < 0 || truth >= n || predicted < 0 || predicted >= n) {
    throw DimensionError("class id out of range for " + std::to_string(n_) + " classes");
  }
  counts_[static_cast<std::size_t>(truth) * n_ + static_cast<std::size_t>(predicted)] += count;
}

std::size_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0}); }

std::size_t ConfusionMatrix::trace() const {
  std::size_t s = 0;
  for (std::size_t c = 0; c < n_; ++c) s += at(c, c);
  return s;
}

std::size_t ConfusionMatrix::row_sum(std::size_t c) const {
  std::size_t s = 0;
  for (std::size_t p = 0; p < n_; ++p) s += at(c, p);
  return s;
}

std::size_t ConfusionMatrix::col_sum(std::size_t c) const {
  std::size_t s = 0;
  for (std::size_t t = 0; t < n_; ++t) s += at(t, c);
  return s;
}

std::vector<std::vector<std::size_t>> ConfusionMatrix::rows() const {
  std::vector<std::vector<std::size_t>> out(n_);
  for (std::size_t t = 0; t < n_; ++t) {
    out[t].assign(counts_.begin() + static_cast<std::ptrdiff_t>(t * n_),
                  counts_.begin() + static_cast<std::ptrdiff_t>((t + 1) * n_));
  }
  return out;
}

double accuracy(const ConfusionMatrix& cm) {
  require_nonempty(cm);
  return ratio(cm.trace(), cm.total());
}

// Global TP = trace, and every miss is one FP and one FN, so
// TP / (TP + (FP + FN) / 2) collapses to trace / total.
double f1_micro(const ConfusionMatrix& cm) { return accuracy(cm); }

std::vector<ClassMetrics> per_class(const ConfusionMatrix& cm) {
  std::vector<ClassMetrics> out(cm.n_classes());
  for (std::size_t c = 0; c < cm.n_classes(); ++c) {
    const std::size_t tp = cm.at(c, c);
    auto& m = out[c];
    m.support = cm.row_sum(c);
    m.precision = ratio(tp, cm.col_sum(c));
    m.recall = ratio(tp, m.support);
    m.f1 = ratio(2 * tp, m.support + cm.col_sum(c));
  }
  return out;
}

double f1_macro(const ConfusionMatrix& cm) {
  require_nonempty(cm);
  double s = 0.0;
  for (const auto& m : per_class(cm)) s += m.f1;
  return s / static_cast<double>(cm.n_classes());
}

MetricsReport make_report(std::vector<std::string> labels, const ConfusionMatrix& cm,
                          std::optional<std::size_t> fold_id) {
  if (labels.size() != cm.n_classes()) {
    throw DimensionError(std::to_string(labels.size()) + " labels for a " +
                         std::to_string(cm.n_classes()) + "-class confusion matrix");
  }
  MetricsReport r;
  r.labels = std::move(labels);
  r.f1_micro = f1_micro(cm);
  r.f1_macro = f1_macro(cm);
  r.classes = per_class(cm);
  r.confusion = cm;
  r.fold_id = fold_id;
  return r;
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw DataError("no values to aggregate");
  MeanStd out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

AggregateReport aggregate_folds(std::span<const MetricsReport> reports) {
  if (reports.empty()) throw DataError("no fold reports to aggregate");
  AggregateReport agg;
  agg.labels = reports.front().labels;
  agg.n_folds = reports.size();
  std::vector<double> micro, macro;
  std::vector<std::vector<double>> per(agg.labels.size());
  for (const auto& r : reports) {
    if (r.labels != agg.labels) throw DataError("fold reports cover different class sets");
    micro.push_back(r.f1_micro);
    macro.push_back(r.f1_macro);
    for (std::size_t c = 0; c < per.size(); ++c) per[c].push_back(r.classes.at(c).f1);
  }
  agg.f1_micro = mean_std(micro);
  agg.f1_macro = mean_std(macro);
  for (const auto& v : per) agg.class_f1.push_back(mean_std(v));
  return agg;
}

nlohmann::ordered_json to_json(const ConfusionMatrix& cm) { return cm.rows(); }

nlohmann::ordered_json to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["labels"] = report.labels;
  j["f1_micro"] = report.f1_micro;
  j["f1_macro"] = report.f1_macro;
  nlohmann::ordered_json per = nlohmann::ordered_json::array();
  for (std::size_t c = 0; c < report.classes.size(); ++c) {
    const auto& m = report.classes[c];
    per.push_back({{"label", report.labels[c]},
                   {"precision", m.precision},
                   {"recall", m.recall},
                   {"f1", m.f1},
                   {"support", m.support}});
  }
  j["per_class"] = std::move(per);
  j["confusion"] = to_json(report.confusion);
  j["n"] = report.confusion.total();
  if (report.fold_id) j["fold_id"] = *report.fold_id;
  return j;
}

nlohmann::ordered_json to_json(const AggregateReport& report) {
  nlohmann::ordered_json j;
  j["labels"] = report.labels;
  j["n_folds"] = report.n_folds;
  j["f1_micro"] = {{"mean", report.f1_micro.mean}, {"std", report.f1_micro.std}};
  j["f1_macro"] = {{"mean", report.f1_macro.mean}, {"std", report.f1_macro.std}};
  nlohmann::ordered_json per = nlohmann::ordered_json::array();
  for (std::size_t c = 0; c < report.class_f1.size(); ++c) {
    per.push_back({{"label", report.labels[c]},
                   {"f1_mean", report.class_f1[c].mean},
                   {"f1_std", report.class_f1[c].std}});
  }
  j["per_class"] = std::move(per);
  return j;
}

MetricsReport report_from_json(const nlohmann::ordered_json& j) {
  auto cm = ConfusionMatrix::from_counts(j.at("confusion").get<std::vector<std::vector<std::size_t>>>());
  std::optional<std::size_t> fold;
  if (j.contains("fold_id")) fold = j.at("fold_id").get<std::size_t>();
  return make_report(j.at("labels").get<std::vector<std::string>>(), cm, fold);
}

ResultTable::ResultTable(std::vector<std::string> rows, std::vector<std::string> cols)
    : columns(std::move(cols)), row_names(std::move(rows)),
      cells(row_names.size(), std::vector<Cell>(columns.size())) {}

void ResultTable::set(std::size_t row, std::size_t col, double value) {
  cells.at(row).at(col) = {value, false};
}

void ResultTable::set_error(std::size_t row, std::size_t col) { cells.at(row).at(col) = {std::nullopt, true}; }

std::size_t ResultTable::error_count() const {
  std::size_t n = 0;
  for (const auto& r : cells) {
    n += static_cast<std::size_t>(std::count_if(r.begin(), r.end(), [](const Cell& c) { return c.error; }));
  }
  return n;
}

std::string render_markdown(const ResultTable& table, const std::string& corner) {
  std::vector<std::vector<std::string>> grid;
  grid.push_back({corner});
  for (const auto& c : table.columns) grid.back().push_back(c);
  for (std::size_t r = 0; r < table.row_names.size(); ++r) {
    std::vector<std::string> line{table.row_names[r]};
    for (const auto& cell : table.cells[r]) {
      line.push_back(cell.error ? "ERROR" : cell.value ? percent(*cell.value) : "");
    }
    grid.push_back(std::move(line));
  }
  std::vector<std::size_t> width(grid.front().size(), 3);
  for (const auto& line : grid) {
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  }
  auto emit = [&](const std::vector<std::string>& line) {
    std::string s = "|";
    for (std::size_t c = 0; c < line.size(); ++c) {
      // Names left-aligned, numbers right-aligned.
      const std::string pad(width[c] - line[c].size(), ' ');
      s += " " + (c == 0 ? line[c] + pad : pad + line[c]) + " |";
    }
    return s + "\n";
  };
  std::string out = emit(grid[0]);
  out += "|";
  for (std::size_t c = 0; c < width.size(); ++c) {
    out += c == 0 ? " " + std::string(width[c], '-') + " |" : " " + std::string(width[c] - 1, '-') + ": |";
  }
  out += "\n";
  for (std::size_t r = 1; r < grid.size(); ++r) out += emit(grid[r]);
  return out;
}

nlohmann::ordered_json to_json(const ResultTable& table) {
  nlohmann::ordered_json j;
  j["columns"] = table.columns;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (std::size_t r = 0; r < table.row_names.size(); ++r) {
    nlohmann::ordered_json cells = nlohmann::ordered_json::object();
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
      const auto& cell = table.cells[r][c];
      cells[table.columns[c]] = cell.error  ? nlohmann::ordered_json("ERROR")
                                : cell.value ? nlohmann::ordered_json(*cell.value)
                                             : nlohmann::ordered_json(nullptr);
    }
    rows.push_back({{"technique", table.row_names[r]}, {"cells", std::move(cells)}});
  }
  j["rows"] = std::move(rows);
  return j;
}

}  // namespace peftlab::metrics
