#include "sst/evaluation.hpp"

#include "json.hpp"

#include <cstdio>
#include <stdexcept>

namespace sst {

ConfusionCounts confusion(std::span<const Status> y_true, std::span<const Status> y_pred, Status positive) {
  if (y_true.size() != y_pred.size())
    throw std::invalid_argument("confusion: " + std::to_string(y_true.size()) + " labels vs " +
                                std::to_string(y_pred.size()) + " predictions");
  if (y_true.empty()) throw std::invalid_argument("confusion: no samples");
  ConfusionCounts c;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const bool actual = y_true[i] == positive;
    const bool predicted = y_pred[i] == positive;
    if (actual && predicted) ++c.tp;
    else if (!actual && predicted) ++c.fp;
    else if (!actual) ++c.tn;
    else ++c.fn;
  }
  return c;
}

MetricsReport metrics(const ConfusionCounts& c, std::string model) {
  if (c.total() <= 0) throw std::invalid_argument("metrics: empty confusion matrix");
  MetricsReport r;
  r.model = std::move(model);
  const auto ratio = [&r](std::int64_t num, std::int64_t den) {
    if (den == 0) {
      r.degenerate = true;
      return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
  };
  r.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  r.precision = ratio(c.tp, c.tp + c.fp);
  r.recall = ratio(c.tp, c.tp + c.fn);
  r.f1 = harmonic_f1(r.precision, r.recall);
  if (r.precision + r.recall <= 0.0) r.degenerate = true;
  return r;
}

void attach_complexity(MetricsReport& report, const ModelConfig& config) {
  const auto cx = count_complexity(config);
  report.params_m = static_cast<double>(cx.params) / 1e6;
  report.macs_g = static_cast<double>(cx.macs) / 1e9;
}

std::vector<Status> true_labels(const FeatureTensor& data) {
  std::vector<Status> y;
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    if (!data.labels[i]) throw std::invalid_argument("sample " + data.bike_ids[i] + " is unlabeled");
    y.push_back(*data.labels[i]);
  }
  return y;
}

std::string report_to_json_line(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["model"] = r.model;
  j["acc"] = r.accuracy;
  j["recall"] = r.recall;
  j["precision"] = r.precision;
  j["f1"] = r.f1;
  if (r.macs_g) j["macs_g"] = *r.macs_g;
  if (r.params_m) j["params_m"] = *r.params_m;
  if (r.degenerate) j["degenerate"] = true;
  return j.dump();
}

MetricsReport report_from_json_line(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  MetricsReport r;
  r.model = j.at("model").get<std::string>();
  r.accuracy = j.at("acc").get<double>();
  r.recall = j.at("recall").get<double>();
  r.precision = j.at("precision").get<double>();
  r.f1 = j.at("f1").get<double>();
  if (j.contains("macs_g")) r.macs_g = j.at("macs_g").get<double>();
  if (j.contains("params_m")) r.params_m = j.at("params_m").get<double>();
  r.degenerate = j.value("degenerate", false);
  return r;
}

RenderedTable render_table(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("render_table: no reports");
  std::size_t name_width = 5;
  for (const auto& r : reports) name_width = std::max(name_width, r.model.size());

  auto cell = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return std::string(buf);
  };
  auto pad = [](std::string s, std::size_t w) {
    if (s.size() < w) s.append(w - s.size(), ' ');
    return s;
  };
  const std::vector<std::string> headers = {"ACC", "Recall", "Precision", "F1 Score", "MACs (G)", "Params (M)"};
  RenderedTable out;
  std::string line = pad("Model", name_width);
  for (const auto& h : headers) line += "  " + pad(h, 10);
  while (!line.empty() && line.back() == ' ') line.pop_back();
  out.text += line + "\n";
  for (const auto& r : reports) {
    std::vector<std::string> cells = {cell(r.accuracy), cell(r.recall), cell(r.precision), cell(r.f1),
                                      r.macs_g ? cell(*r.macs_g) : "---", r.params_m ? cell(*r.params_m) : "---"};
    line = pad(r.model, name_width);
    for (const auto& c : cells) line += "  " + pad(c, 10);
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out.text += line + "\n";
    out.rows.push_back(report_to_json_line(r));
  }
  return out;
}

}  // namespace sst
