#pragma once

// Metric history CSV, SVG line plots, evaluation and prediction files.

#include <filesystem>
#include <nlohmann/json_fwd.hpp>
#include <string>
#include <vector>

#include "defectvit/image.hpp"
#include "defectvit/metrics.hpp"

namespace defectvit {

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_cce = 0.0;
  double train_mse = 0.0;
  Metric train_accuracy, train_mae, train_mean_iou;
  double val_loss = 0.0;
  Metric val_accuracy, val_mae, val_mean_iou;

  bool operator==(const EpochRecord&) const;
};

// Shortest text that parses back to the same double; "undefined" for
// undefined metrics.
std::string format_number(double v);
std::string format_metric(const Metric& m);

std::string history_csv(const std::vector<EpochRecord>& history);
void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history);
nlohmann::json history_to_json(const std::vector<EpochRecord>& history);
std::vector<EpochRecord> history_from_json(const nlohmann::json& j);

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

std::string line_plot_svg(const std::string& title, const std::string& y_label, const std::vector<PlotSeries>& series);
// loss.svg, accuracy.svg, mae.svg and mean_iou.svg in dir.
void write_history_plots(const std::filesystem::path& dir, const std::vector<EpochRecord>& history);

nlohmann::json eval_report_json(const EvalReport& report, const std::vector<std::string>& classes, const std::string& split);
std::string eval_report_csv(const EvalReport& report, const std::vector<std::string>& classes, const std::string& split);
// report.json and report.csv in dir.
void write_eval_report(const std::filesystem::path& dir, const EvalReport& report,
                       const std::vector<std::string>& classes, const std::string& split);

nlohmann::json predictions_json(const std::string& image, int width, int height, const std::vector<Detection>& dets,
                                const std::vector<std::string>& classes);
std::string predictions_svg(const Image& image, const std::vector<Detection>& dets, const std::vector<std::string>& classes);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace defectvit
