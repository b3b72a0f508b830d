#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tripletforge/error.hpp"

namespace tforge::training {

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Classification report. confusion[t][p] counts samples of true class t
/// predicted as p.
struct EvalReport {
  std::size_t classes = 0;
  std::vector<std::vector<std::size_t>> confusion;
  std::vector<ClassMetrics> per_class;
  double accuracy = 0.0;
  std::size_t total = 0;
  int fold_id = -1;
  std::string config;  // resolved configuration echo (JSON text)
};

/// Precision, recall and F1 of every class plus accuracy, all read off the
/// confusion matrix. Classes never predicted have precision 0; classes absent
/// from the truth have recall 0; F1 is 0 when precision + recall is 0.
inline void fill_metrics(EvalReport& r) {
  const std::size_t k = r.classes;
  r.per_class.assign(k, {});
  std::size_t trace = 0;
  r.total = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t row = 0, col = 0;
    for (std::size_t j = 0; j < k; ++j) {
      row += r.confusion[c][j];
      col += r.confusion[j][c];
    }
    const auto tp = static_cast<double>(r.confusion[c][c]);
    ClassMetrics& m = r.per_class[c];
    m.precision = col == 0 ? 0.0 : tp / static_cast<double>(col);
    m.recall = row == 0 ? 0.0 : tp / static_cast<double>(row);
    m.f1 = m.precision + m.recall == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
    trace += r.confusion[c][c];
    r.total += row;
  }
  r.accuracy = r.total == 0 ? 0.0 : static_cast<double>(trace) / static_cast<double>(r.total);
}

inline EvalReport make_report(std::span<const int> truth, std::span<const int> predicted, std::size_t classes) {
  if (truth.size() != predicted.size()) {
    throw ShapeError("make_report: " + std::to_string(truth.size()) + " labels vs " +
                     std::to_string(predicted.size()) + " predictions");
  }
  if (truth.empty()) throw ConfigError("make_report: empty test set");
  EvalReport r;
  r.classes = classes;
  r.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || predicted[i] < 0 || static_cast<std::size_t>(truth[i]) >= classes ||
        static_cast<std::size_t>(predicted[i]) >= classes) {
      throw ConfigError("make_report: class index out of range at row " + std::to_string(i));
    }
    ++r.confusion[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];
  }
  fill_metrics(r);
  return r;
}

/// Index of the largest entry in each row; ties go to the lowest index.
inline std::vector<int> argmax_rows(std::span<const double> values, std::size_t cols) {
  std::vector<int> out;
  for (std::size_t r = 0; r * cols < values.size(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c) {
      if (values[r * cols + c] > values[r * cols + best]) best = c;
    }
    out.push_back(static_cast<int>(best));
  }
  return out;
}

/// Elementwise sum of confusion matrices, with metrics recomputed.
inline EvalReport aggregate(std::span<const EvalReport> reports) {
  if (reports.empty()) throw ConfigError("aggregate: no reports");
  EvalReport r;
  r.classes = reports.front().classes;
  r.confusion.assign(r.classes, std::vector<std::size_t>(r.classes, 0));
  for (const auto& rep : reports) {
    if (rep.classes != r.classes) throw ShapeError("aggregate: reports differ in class count");
    for (std::size_t i = 0; i < r.classes; ++i)
      for (std::size_t j = 0; j < r.classes; ++j) r.confusion[i][j] += rep.confusion[i][j];
  }
  fill_metrics(r);
  return r;
}

}  // namespace tforge::training
