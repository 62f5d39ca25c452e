#include <nlohmann/json.hpp>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "defectvit/commands.hpp"
#include "defectvit/errors.hpp"

namespace py = pybind11;
using namespace defectvit;

namespace {

py::dict box_dict(const BBox& b) {
  py::dict d;
  d["x1"] = b.x1;
  d["y1"] = b.y1;
  d["x2"] = b.x2;
  d["y2"] = b.y2;
  d["class"] = b.class_id ? py::cast(*b.class_id) : py::none();
  return d;
}

BBox box_from(const py::dict& d) {
  BBox b{d["x1"].cast<double>(), d["y1"].cast<double>(), d["x2"].cast<double>(), d["y2"].cast<double>(), {}};
  if (d.contains("class") && !d["class"].is_none()) b.class_id = d["class"].cast<int>();
  return b;
}

py::object metric(const Metric& m) { return m.defined ? py::cast(m.value) : py::none(); }

py::dict report_dict(const EvalReport& r) {
  py::dict d;
  d["samples"] = r.samples;
  d["accuracy"] = metric(r.accuracy());
  d["mae"] = metric(r.mae());
  d["mean_iou"] = metric(r.mean_iou());
  d["matched_pairs"] = r.pairs;
  d["unmatched_predictions"] = r.unmatched_predictions;
  d["unmatched_truths"] = r.unmatched_truths;
  return d;
}

py::list detections_list(const std::vector<Detection>& dets) {
  py::list out;
  for (const auto& det : dets) {
    py::dict d = box_dict(det.box);
    d["class"] = det.class_id;
    d["score"] = det.score;
    out.append(d);
  }
  return out;
}

Tensor rows_tensor(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw ContractError("need at least one row");
  std::vector<Scalar> data;
  for (const auto& r : rows) {
    if (r.size() != rows.front().size()) throw ContractError("rows must have equal length");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), rows.front().size()}, std::move(data));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Synthetic defect data, anchor utilities, losses and the train/eval/predict pipeline";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<RefusalError>(m, "RefusalError", PyExc_RuntimeError);

  m.def("iou", [](const py::dict& a, const py::dict& b) { return iou(box_from(a), box_from(b)); });
  m.def("encode_offsets", [](const py::dict& anchor, const py::dict& gt) {
    const Offsets o = encode_offsets(box_from(anchor), box_from(gt));
    return std::vector<double>(o.begin(), o.end());
  });
  m.def("decode_offsets", [](const py::dict& anchor, const std::array<double, 4>& offsets) {
    return box_dict(decode_offsets(box_from(anchor), offsets));
  });
  m.def("anchor_grid", [](int image_size, int stride, std::vector<double> scales, std::vector<double> ratios) {
    const AnchorGrid g = build_anchor_grid({image_size, stride, std::move(scales), std::move(ratios)});
    py::list out;
    for (const auto& a : g.anchors) out.append(box_dict(a));
    return out;
  }, py::arg("image_size") = 64, py::arg("stride") = 16, py::arg("scales") = std::vector<double>{12, 24, 40},
     py::arg("aspect_ratios") = std::vector<double>{0.5, 1.0, 2.0});

  m.def("modified_cce", [](const std::vector<std::vector<double>>& y_true, const std::vector<std::vector<double>>& y_pred,
                           bool normalize) { return modified_cce(rows_tensor(y_true), rows_tensor(y_pred), normalize).item(); },
        py::arg("y_true"), py::arg("y_pred"), py::arg("normalize") = false);
  m.def("modified_mse", [](const std::vector<std::vector<double>>& y_true, const std::vector<std::vector<double>>& y_pred) {
    return modified_mse(rows_tensor(y_true), rows_tensor(y_pred)).item();
  });
  m.def("modified_accuracy", [](const std::vector<std::vector<double>>& y_true, const std::vector<std::vector<double>>& y_pred) {
    return metric(modified_accuracy(rows_tensor(y_true), rows_tensor(y_pred)));
  });

  m.def("generate_sample", [](int image_size, std::uint64_t sample_seed, std::vector<std::string> classes) {
    GenConfig cfg;
    cfg.image_size = image_size;
    if (!classes.empty()) cfg.classes = std::move(classes);
    cfg.validate();
    const SampleRecord s = generate_sample(cfg, sample_seed);
    py::dict d;
    d["id"] = s.id;
    d["width"] = s.image.width;
    d["height"] = s.image.height;
    d["pixels"] = s.image.pixels;
    py::list boxes;
    for (const auto& b : s.boxes) boxes.append(box_dict(b));
    d["boxes"] = boxes;
    return d;
  }, py::arg("image_size") = 64, py::arg("sample_seed") = 0, py::arg("classes") = std::vector<std::string>{});

  m.def("validate_config", [](const std::string& path) { return config_to_json(load_config(path)).dump(); });

  m.def("generate", [](const std::string& config, bool force, std::optional<std::uint64_t> seed) {
    RunConfig cfg = load_config(config);
    if (seed) cfg.data.gen.seed = *seed;
    py::gil_scoped_release release;
    const auto s = run_generate(cfg, force, thread_count());
    return std::vector<std::size_t>{s.train, s.val, s.test};
  }, py::arg("config"), py::arg("force") = false, py::arg("seed") = py::none());

  m.def("train", [](const std::string& config, std::optional<std::string> checkpoint, std::optional<std::uint64_t> seed,
                    std::optional<std::string> out) {
    RunConfig cfg = load_config(config);
    if (seed) cfg.seed = *seed;
    if (out) cfg.output_dir = *out;
    std::optional<std::filesystem::path> resume;
    if (checkpoint) resume = *checkpoint;
    std::vector<EpochRecord> history;
    {
      py::gil_scoped_release release;
      history = run_train(cfg, resume, thread_count()).state.history;
    }
    py::list out_list;
    for (const auto& r : history) {
      py::dict d;
      d["epoch"] = r.epoch;
      d["train_loss"] = r.train_loss;
      d["train_accuracy"] = metric(r.train_accuracy);
      d["train_mean_iou"] = metric(r.train_mean_iou);
      d["val_loss"] = r.val_loss;
      d["val_accuracy"] = metric(r.val_accuracy);
      d["val_mean_iou"] = metric(r.val_mean_iou);
      out_list.append(d);
    }
    return out_list;
  }, py::arg("config"), py::arg("checkpoint") = py::none(), py::arg("seed") = py::none(), py::arg("out") = py::none());

  m.def("evaluate", [](const std::string& checkpoint, const std::string& split, std::optional<std::string> data_root,
                       const std::string& out) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    const std::string root = data_root ? *data_root : ck.config.data.root;
    EvalReport report;
    {
      py::gil_scoped_release release;
      report = run_eval(ck, root, split, out, thread_count()).result.report;
    }
    return report_dict(report);
  }, py::arg("checkpoint"), py::arg("split"), py::arg("data_root") = py::none(), py::arg("out") = "eval");

  m.def("predict", [](const std::string& checkpoint, const std::string& image, const std::string& out) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    return detections_list(run_predict(ck, image, out).detections);
  }, py::arg("checkpoint"), py::arg("image"), py::arg("out") = "predictions.json");
}
