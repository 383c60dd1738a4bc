#pragma once

#include "sst/data_model.hpp"
#include "sst/feature_engine.hpp"
#include "sst/model.hpp"
#include "sst/training.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sst {

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t tn = 0;
  std::int64_t fn = 0;

  std::int64_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Counts with `positive` as the positive class (Unusable by default).
ConfusionCounts confusion(std::span<const Status> y_true, std::span<const Status> y_pred,
                          Status positive = Status::Unusable);

struct MetricsReport {
  std::string model;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // Set when precision, recall or F1 had a zero denominator and was reported as 0.
  bool degenerate = false;
  std::optional<double> params_m;
  std::optional<double> macs_g;
  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

/// 2PR/(P+R), or 0 when P+R is 0.
inline double harmonic_f1(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

/// Accuracy (TP+TN)/total, precision TP/(TP+FP), recall TP/(TP+FN) and
/// F1 = 2PR/(P+R). Zero denominators yield 0 and set `degenerate`.
MetricsReport metrics(const ConfusionCounts& c, std::string model = {});

/// Argmax over (normal, unusable); an exact tie resolves to Normal.
inline Status decide(double p_normal, double p_unusable) {
  return p_unusable > p_normal ? Status::Unusable : Status::Normal;
}

void attach_complexity(MetricsReport& report, const ModelConfig& config);

/// Class probabilities (normal, unusable) per sample, eval mode.
template <typename Scalar>
std::vector<std::array<double, 2>> predict_probabilities(const SSTransformer<Scalar>& model, const FeatureTensor& data,
                                                         std::size_t batch = 128) {
  check_compatible(model.config(), data);
  NoGradGuard guard;
  std::vector<std::array<double, 2>> out;
  out.reserve(static_cast<std::size_t>(data.n));
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < static_cast<std::size_t>(data.n); start += batch) {
    rows.clear();
    for (std::size_t i = start; i < std::min(static_cast<std::size_t>(data.n), start + batch); ++i) rows.push_back(i);
    const auto probs = model.predict_proba(gather_batch<Scalar>(data, rows));
    for (std::size_t i = 0; i < rows.size(); ++i)
      out.push_back({static_cast<double>(probs.value()(static_cast<Index>(2 * i))),
                     static_cast<double>(probs.value()(static_cast<Index>(2 * i + 1)))});
  }
  return out;
}

std::vector<Status> true_labels(const FeatureTensor& data);

template <typename Scalar>
MetricsReport evaluate(const SSTransformer<Scalar>& model, const FeatureTensor& data, std::string name) {
  if (!data.fully_labeled()) throw std::invalid_argument("evaluate: tensor has unlabeled samples");
  const auto probs = predict_probabilities(model, data);
  std::vector<Status> pred;
  for (const auto& p : probs) pred.push_back(decide(p[0], p[1]));
  auto report = metrics(confusion(true_labels(data), pred), std::move(name));
  attach_complexity(report, model.config());
  return report;
}

/// {model, acc, recall, precision, f1[, macs_g][, params_m][, degenerate]}
std::string report_to_json_line(const MetricsReport& r);
MetricsReport report_from_json_line(const std::string& line);

struct RenderedTable {
  std::string text;                 // aligned, 4 decimals, "---" for absent complexity
  std::vector<std::string> rows;    // one JSON line per report, input order
};

RenderedTable render_table(const std::vector<MetricsReport>& reports);

}  // namespace sst
