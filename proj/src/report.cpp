#include "defectvit/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "defectvit/errors.hpp"

namespace defectvit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json metric_json(const Metric& m) { return m.defined ? json(m.value) : json(nullptr); }

Metric metric_from(const json& j) {
  if (j.is_null()) return {};
  return {j.get<double>(), true};
}

bool same(const Metric& a, const Metric& b) { return a.defined == b.defined && (!a.defined || a.value == b.value); }

std::string base64(const std::vector<unsigned char>& bytes) {
  static const char* table = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  for (std::size_t i = 0; i < bytes.size(); i += 3) {
    const std::uint32_t b0 = bytes[i];
    const std::uint32_t b1 = i + 1 < bytes.size() ? bytes[i + 1] : 0;
    const std::uint32_t b2 = i + 2 < bytes.size() ? bytes[i + 2] : 0;
    const std::uint32_t n = (b0 << 16) | (b1 << 8) | b2;
    out += table[(n >> 18) & 63];
    out += table[(n >> 12) & 63];
    out += i + 1 < bytes.size() ? table[(n >> 6) & 63] : '=';
    out += i + 2 < bytes.size() ? table[n & 63] : '=';
  }
  return out;
}

std::string class_name(int id, const std::vector<std::string>& classes) {
  return id >= 0 && static_cast<std::size_t>(id) < classes.size() ? classes[static_cast<std::size_t>(id)]
                                                                    : "class_" + std::to_string(id);
}

const char* kPalette[] = {"#e41a1c", "#377eb8", "#4daf4a", "#984ea3", "#ff7f00", "#a6a61e", "#a65628", "#f781bf"};

}  // namespace

bool EpochRecord::operator==(const EpochRecord& o) const {
  return epoch == o.epoch && train_loss == o.train_loss && train_cce == o.train_cce && train_mse == o.train_mse &&
         same(train_accuracy, o.train_accuracy) && same(train_mae, o.train_mae) &&
         same(train_mean_iou, o.train_mean_iou) && val_loss == o.val_loss && same(val_accuracy, o.val_accuracy) &&
         same(val_mae, o.val_mae) && same(val_mean_iou, o.val_mean_iou);
}

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string format_metric(const Metric& m) { return m.defined ? format_number(m.value) : "undefined"; }

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream out;
  out << "epoch,train_loss,train_cce,train_mse,train_accuracy,train_mae,train_mean_iou,val_loss,val_accuracy,val_mae,"
         "val_mean_iou\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << format_number(r.train_loss) << ',' << format_number(r.train_cce) << ','
        << format_number(r.train_mse) << ',' << format_metric(r.train_accuracy) << ',' << format_metric(r.train_mae)
        << ',' << format_metric(r.train_mean_iou) << ',' << format_number(r.val_loss) << ','
        << format_metric(r.val_accuracy) << ',' << format_metric(r.val_mae) << ',' << format_metric(r.val_mean_iou)
        << '\n';
  }
  return out.str();
}

void write_history_csv(const fs::path& path, const std::vector<EpochRecord>& history) {
  write_text(path, history_csv(history));
}

json history_to_json(const std::vector<EpochRecord>& history) {
  json out = json::array();
  for (const auto& r : history) {
    out.push_back({{"epoch", r.epoch},
                   {"train_loss", r.train_loss},
                   {"train_cce", r.train_cce},
                   {"train_mse", r.train_mse},
                   {"train_accuracy", metric_json(r.train_accuracy)},
                   {"train_mae", metric_json(r.train_mae)},
                   {"train_mean_iou", metric_json(r.train_mean_iou)},
                   {"val_loss", r.val_loss},
                   {"val_accuracy", metric_json(r.val_accuracy)},
                   {"val_mae", metric_json(r.val_mae)},
                   {"val_mean_iou", metric_json(r.val_mean_iou)}});
  }
  return out;
}

std::vector<EpochRecord> history_from_json(const json& j) {
  std::vector<EpochRecord> out;
  for (const auto& r : j) {
    EpochRecord e;
    e.epoch = r.at("epoch").get<int>();
    e.train_loss = r.at("train_loss").get<double>();
    e.train_cce = r.at("train_cce").get<double>();
    e.train_mse = r.at("train_mse").get<double>();
    e.train_accuracy = metric_from(r.at("train_accuracy"));
    e.train_mae = metric_from(r.at("train_mae"));
    e.train_mean_iou = metric_from(r.at("train_mean_iou"));
    e.val_loss = r.at("val_loss").get<double>();
    e.val_accuracy = metric_from(r.at("val_accuracy"));
    e.val_mae = metric_from(r.at("val_mae"));
    e.val_mean_iou = metric_from(r.at("val_mean_iou"));
    out.push_back(e);
  }
  return out;
}

std::string line_plot_svg(const std::string& title, const std::string& y_label, const std::vector<PlotSeries>& series) {
  constexpr double W = 640, H = 400, L = 70, R = 20, T = 40, B = 50;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (xmin > xmax) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;
  auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = ymin + (ymax - ymin) * i / 4.0, xv = xmin + (xmax - xmin) * i / 4.0;
    char yl[32], xl[32];
    std::snprintf(yl, sizeof yl, "%.3g", yv);
    std::snprintf(xl, sizeof xl, "%.3g", xv);
    o << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << yl << "</text>\n";
    o << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << xl << "</text>\n";
  }
  o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">epoch</text>\n";
  o << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << (T + H - B) / 2 << ")\">" << y_label << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % 8];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      if (std::isfinite(s.y[i])) o << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    o << "\"/>\n";
    o << "<text x=\"" << W - R - 4 << "\" y=\"" << T + 16 * (k + 1) << "\" text-anchor=\"end\" fill=\"" << color << "\">"
      << s.label << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

void write_history_plots(const fs::path& dir, const std::vector<EpochRecord>& history) {
  auto series = [&](const std::string& label, auto get) {
    PlotSeries s{label, {}, {}};
    for (const auto& r : history) {
      s.x.push_back(r.epoch);
      s.y.push_back(get(r));
    }
    return s;
  };
  auto val = [](const Metric& m) { return m.defined ? m.value : std::nan(""); };
  write_text(dir / "loss.svg", line_plot_svg("Loss", "combined loss",
                                             {series("train", [](const EpochRecord& r) { return r.train_loss; }),
                                              series("val", [](const EpochRecord& r) { return r.val_loss; })}));
  write_text(dir / "accuracy.svg",
             line_plot_svg("Modified accuracy", "accuracy",
                           {series("train", [&](const EpochRecord& r) { return val(r.train_accuracy); }),
                            series("val", [&](const EpochRecord& r) { return val(r.val_accuracy); })}));
  write_text(dir / "mae.svg", line_plot_svg("Box MAE", "pixels",
                                            {series("train", [&](const EpochRecord& r) { return val(r.train_mae); }),
                                             series("val", [&](const EpochRecord& r) { return val(r.val_mae); })}));
  write_text(dir / "mean_iou.svg",
             line_plot_svg("Mean IoU", "IoU",
                           {series("train", [&](const EpochRecord& r) { return val(r.train_mean_iou); }),
                            series("val", [&](const EpochRecord& r) { return val(r.val_mean_iou); })}));
}

json eval_report_json(const EvalReport& r, const std::vector<std::string>& classes, const std::string& split) {
  json per_class = json::object();
  for (const auto& [id, c] : r.per_class) {
    per_class[class_name(id, classes)] = {{"truths", c.truths},
                                          {"predictions", c.predictions},
                                          {"matched", c.matched},
                                          {"anchors_total", c.anchors_total},
                                          {"anchors_correct", c.anchors_correct}};
  }
  json undefined = json::array();
  if (!r.accuracy().defined) undefined.push_back("accuracy");
  if (!r.mae().defined) undefined.push_back("mae");
  if (!r.mean_iou().defined) undefined.push_back("mean_iou");
  return {{"split", split},
          {"samples", r.samples},
          {"accuracy", metric_json(r.accuracy())},
          {"mae", metric_json(r.mae())},
          {"mean_iou", metric_json(r.mean_iou())},
          {"undefined", undefined},
          {"anchors_correct", r.anchors.correct},
          {"anchors_total", r.anchors.total},
          {"matched_pairs", r.pairs},
          {"unmatched_predictions", r.unmatched_predictions},
          {"unmatched_truths", r.unmatched_truths},
          {"invalid_boxes", r.invalid_boxes},
          {"per_class", per_class}};
}

std::string eval_report_csv(const EvalReport& r, const std::vector<std::string>& classes, const std::string& split) {
  std::ostringstream o;
  o << "key,value\n";
  o << "split," << split << '\n';
  o << "samples," << r.samples << '\n';
  o << "accuracy," << format_metric(r.accuracy()) << '\n';
  o << "mae," << format_metric(r.mae()) << '\n';
  o << "mean_iou," << format_metric(r.mean_iou()) << '\n';
  o << "anchors_correct," << r.anchors.correct << '\n';
  o << "anchors_total," << r.anchors.total << '\n';
  o << "matched_pairs," << r.pairs << '\n';
  o << "unmatched_predictions," << r.unmatched_predictions << '\n';
  o << "unmatched_truths," << r.unmatched_truths << '\n';
  o << "invalid_boxes," << r.invalid_boxes << '\n';
  for (const auto& [id, c] : r.per_class) {
    const std::string n = "per_class." + class_name(id, classes) + ".";
    o << n << "truths," << c.truths << '\n';
    o << n << "predictions," << c.predictions << '\n';
    o << n << "matched," << c.matched << '\n';
    o << n << "anchors_total," << c.anchors_total << '\n';
    o << n << "anchors_correct," << c.anchors_correct << '\n';
  }
  return o.str();
}

void write_eval_report(const fs::path& dir, const EvalReport& report, const std::vector<std::string>& classes,
                       const std::string& split) {
  fs::create_directories(dir);
  write_text(dir / "report.json", eval_report_json(report, classes, split).dump(2) + "\n");
  write_text(dir / "report.csv", eval_report_csv(report, classes, split));
}

json predictions_json(const std::string& image, int width, int height, const std::vector<Detection>& dets,
                      const std::vector<std::string>& classes) {
  json boxes = json::array();
  for (const auto& d : dets) {
    boxes.push_back({{"x1", d.box.x1},
                     {"y1", d.box.y1},
                     {"x2", d.box.x2},
                     {"y2", d.box.y2},
                     {"class", d.class_id},
                     {"label", class_name(d.class_id, classes)},
                     {"score", d.score}});
  }
  return {{"image", image}, {"width", width}, {"height", height}, {"classes", classes}, {"boxes", boxes}};
}

std::string predictions_svg(const Image& image, const std::vector<Detection>& dets, const std::vector<std::string>& classes) {
  const int scale = std::max(1, 512 / std::max(image.width, 1));
  const int w = image.width * scale, h = image.height * scale;
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\">\n";
  o << "<image width=\"" << w << "\" height=\"" << h << "\" style=\"image-rendering:pixelated\" href=\"data:image/png;base64,"
    << base64(encode_png(image)) << "\"/>\n";
  for (const auto& d : dets) {
    const char* color = kPalette[static_cast<std::size_t>(std::max(d.class_id, 0)) % 8];
    char score[16];
    std::snprintf(score, sizeof score, "%.2f", d.score);
    o << "<rect x=\"" << d.box.x1 * scale << "\" y=\"" << d.box.y1 * scale << "\" width=\"" << d.box.width() * scale
      << "\" height=\"" << d.box.height() * scale << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    o << "<text x=\"" << d.box.x1 * scale + 2 << "\" y=\"" << d.box.y1 * scale + 12 << "\" font-size=\"11\" fill=\""
      << color << "\">" << class_name(d.class_id, classes) << ' ' << score << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace defectvit
