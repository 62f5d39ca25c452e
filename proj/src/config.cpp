#include "defectvit/config.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <toml.hpp>

#include "defectvit/errors.hpp"

namespace defectvit {

using nlohmann::json;

namespace {

json toml_to_json(const toml::node& node) {
  if (const auto* t = node.as_table()) {
    json out = json::object();
    for (const auto& [k, v] : *t) out[std::string(k.str())] = toml_to_json(v);
    return out;
  }
  if (const auto* a = node.as_array()) {
    json out = json::array();
    for (const auto& v : *a) out.push_back(toml_to_json(v));
    return out;
  }
  if (const auto* v = node.as_integer()) return v->get();
  if (const auto* v = node.as_floating_point()) return v->get();
  if (const auto* v = node.as_boolean()) return v->get();
  if (const auto* v = node.as_string()) return v->get();
  throw ConfigError("unsupported TOML value (dates and times are not used)");
}

// Reads known keys from one table and rejects the rest.
class Section {
 public:
  Section(const json& j, std::string path, const std::string& origin) : path_(std::move(path)), origin_(origin) {
    if (!j.is_object()) fail("", "must be a table");
    j_ = &j;
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [k, v] : j_->items())
      if (!seen_.count(k)) fail(k, "is not a recognised key");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_->contains(key);
  }
  const json& raw(const std::string& key) { return j_->at(key); }

  void get(const std::string& key, double& out) {
    if (!has(key)) return;
    const auto& v = j_->at(key);
    if (!v.is_number()) fail(key, "must be a number");
    out = v.get<double>();
  }
  void get(const std::string& key, int& out) {
    if (!has(key)) return;
    const auto& v = j_->at(key);
    if (!v.is_number_integer()) fail(key, "must be an integer");
    out = v.get<int>();
  }
  template <class U>
    requires std::is_unsigned_v<U> && (!std::is_same_v<U, bool>)
  void get(const std::string& key, U& out) {
    if (!has(key)) return;
    const auto& v = j_->at(key);
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
      fail(key, "must be a non-negative integer");
    }
    out = v.get<U>();
  }
  void get(const std::string& key, bool& out) {
    if (!has(key)) return;
    const auto& v = j_->at(key);
    if (!v.is_boolean()) fail(key, "must be true or false");
    out = v.get<bool>();
  }
  void get(const std::string& key, std::string& out) {
    if (!has(key)) return;
    const auto& v = j_->at(key);
    if (!v.is_string()) fail(key, "must be a string");
    out = v.get<std::string>();
  }
  template <class T>
  void get(const std::string& key, std::vector<T>& out) {
    if (!has(key)) return;
    const auto& v = j_->at(key);
    if (!v.is_array()) fail(key, "must be a list");
    std::vector<T> tmp;
    for (const auto& e : v) {
      if constexpr (std::is_same_v<T, std::string>) {
        if (!e.is_string()) fail(key, "must hold strings");
      } else if constexpr (std::is_integral_v<T>) {
        if (!e.is_number_integer()) fail(key, "must hold integers");
      } else {
        if (!e.is_number()) fail(key, "must hold numbers");
      }
      tmp.push_back(e.get<T>());
    }
    out = std::move(tmp);
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    std::string name = path_;
    if (!key.empty()) name += (name.empty() ? "" : ".") + key;
    throw ConfigError(origin_ + ": " + (name.empty() ? "document" : name) + " " + what);
  }

 private:
  const json* j_ = nullptr;
  std::string path_;
  const std::string& origin_;
  std::set<std::string> seen_;
};

EncoderKind encoder_from(const std::string& s, const std::string& origin) {
  if (s == "vit") return EncoderKind::vit;
  if (s == "patch_passthrough") return EncoderKind::patch_passthrough;
  throw ConfigError(origin + ": model.encoder must be \"vit\" or \"patch_passthrough\", got \"" + s + "\"");
}

std::string encoder_name(EncoderKind k) { return k == EncoderKind::vit ? "vit" : "patch_passthrough"; }

}  // namespace

void RunConfig::finalize() {
  data.gen.validate();
  if (model.vit.image_size <= 0) throw ConfigError("model.image_size must be positive");
  model.vit.channels = 1;
  grid.image_size = model.vit.image_size;
  const AnchorGrid g = build_anchor_grid(grid);
  model.head.num_anchors = static_cast<int>(g.size());
  model.head.num_classes = static_cast<int>(num_classes());
  model.validate();
  if (!(assign.lower <= assign.upper) || assign.lower < 0 || assign.upper > 1) {
    throw ConfigError("anchors: need 0 <= lower <= upper <= 1");
  }
  if (!(adam.lr > 0) || !(adam.beta1 >= 0 && adam.beta1 < 1) || !(adam.beta2 >= 0 && adam.beta2 < 1) || !(adam.eps > 0)) {
    throw ConfigError("optimizer: lr and eps must be positive, betas in [0, 1)");
  }
  adam.f32_storage = true;
  if (train.epochs < 1) throw ConfigError("optimizer.epochs must be at least 1");
  if (train.batch_size < 1) throw ConfigError("optimizer.batch_size must be at least 1");
  if (data.val_split != "train" && data.val_split != "val" && data.val_split != "test") {
    throw ConfigError("data.val_split must be train, val or test");
  }
  if (!(loss.lambda >= 0)) throw ConfigError("loss.lambda must be non-negative");
  if (!(eval.match_iou >= 0 && eval.match_iou <= 1)) throw ConfigError("eval.match_iou must lie in [0, 1]");
}

RunConfig config_from_json(const json& j, const std::string& origin) {
  RunConfig c;
  bool model_size_set = false;
  {
    Section top(j, "", origin);
    top.get("seed", c.seed);
    top.get("output_dir", c.output_dir);
    if (top.has("data")) {
      Section s(top.raw("data"), "data", origin);
      s.get("root", c.data.root);
      s.get("seed", c.data.gen.seed);
      s.get("image_size", c.data.gen.image_size);
      s.get("classes", c.data.gen.classes);
      if (s.has("defects_per_image")) {
        std::vector<int> range;
        s.get("defects_per_image", range);
        if (range.size() != 2) s.fail("defects_per_image", "must be [min, max]");
        c.data.gen.min_defects = range[0];
        c.data.gen.max_defects = range[1];
      }
      s.get("overlap_allowed", c.data.gen.overlap_allowed);
      s.get("noise_level", c.data.gen.noise_level);
      s.get("train_count", c.data.train_count);
      s.get("val_count", c.data.val_count);
      s.get("test_count", c.data.test_count);
      s.get("val_split", c.data.val_split);
      s.get("augment", c.data.augment);
    }
    if (top.has("model")) {
      Section s(top.raw("model"), "model", origin);
      if (s.has("encoder")) {
        std::string e;
        s.get("encoder", e);
        c.model.encoder = encoder_from(e, origin);
      }
      model_size_set = s.has("image_size");
      s.get("image_size", c.model.vit.image_size);
      s.get("patch_size", c.model.vit.patch_size);
      s.get("embed_dim", c.model.vit.embed_dim);
      s.get("num_heads", c.model.vit.num_heads);
      s.get("num_layers", c.model.vit.num_layers);
      s.get("mlp_ratio", c.model.vit.mlp_ratio);
      s.get("dropout", c.model.vit.dropout_rate);
      s.get("cnn_channels", c.model.head.cnn_channels);
      s.get("cnn_kernel", c.model.head.cnn_kernel);
      s.get("mlp_hidden", c.model.head.mlp_hidden);
      s.get("head_dropout", c.model.head.dropout_rate);
      if (s.has("num_anchors") || s.has("num_classes")) {
        // Derived values; accepted only when consistent.
        int anchors = -1, classes = -1;
        s.get("num_anchors", anchors);
        s.get("num_classes", classes);
        c.model.head.num_anchors = anchors;
        c.model.head.num_classes = classes;
      }
    }
    if (top.has("anchors")) {
      Section s(top.raw("anchors"), "anchors", origin);
      s.get("stride", c.grid.stride);
      s.get("scales", c.grid.scales);
      s.get("aspect_ratios", c.grid.aspect_ratios);
      s.get("upper", c.assign.upper);
      s.get("lower", c.assign.lower);
      s.get("force_match", c.assign.force_match);
    }
    if (top.has("loss")) {
      Section s(top.raw("loss"), "loss", origin);
      s.get("lambda", c.loss.lambda);
      s.get("normalize_cce", c.loss.normalize_cce);
    }
    if (top.has("optimizer")) {
      Section s(top.raw("optimizer"), "optimizer", origin);
      s.get("lr", c.adam.lr);
      s.get("beta1", c.adam.beta1);
      s.get("beta2", c.adam.beta2);
      s.get("eps", c.adam.eps);
      s.get("epochs", c.train.epochs);
      s.get("batch_size", c.train.batch_size);
    }
    if (top.has("eval")) {
      Section s(top.raw("eval"), "eval", origin);
      s.get("confidence_threshold", c.eval.predict.confidence_threshold);
      s.get("nms_iou", c.eval.predict.nms_iou);
      s.get("match_iou", c.eval.match_iou);
    }
  }
  if (!model_size_set) c.model.vit.image_size = c.data.gen.image_size;

  const int declared_anchors = j.contains("model") && j["model"].contains("num_anchors") ? c.model.head.num_anchors : -1;
  const int declared_classes = j.contains("model") && j["model"].contains("num_classes") ? c.model.head.num_classes : -1;
  c.finalize();
  if (declared_anchors >= 0 && declared_anchors != c.model.head.num_anchors) {
    throw ConfigError(origin + ": model.num_anchors = " + std::to_string(declared_anchors) + " but the anchor grid has " +
                      std::to_string(c.model.head.num_anchors));
  }
  if (declared_classes >= 0 && declared_classes != c.model.head.num_classes) {
    throw ConfigError(origin + ": model.num_classes = " + std::to_string(declared_classes) + " but data.classes gives " +
                      std::to_string(c.model.head.num_classes) + " (background included)");
  }
  return c;
}

RunConfig parse_config_toml(const std::string& text, const std::string& origin) {
  toml::table table;
  try {
    table = toml::parse(text, origin);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << origin << ":" << e.source().begin.line << ":" << e.source().begin.column << ": " << e.description();
    throw ConfigError(msg.str());
  }
  return config_from_json(toml_to_json(table), origin);
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_toml(ss.str(), path.string());
}

json config_to_json(const RunConfig& c) {
  return {
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"data",
       {{"root", c.data.root},
        {"seed", c.data.gen.seed},
        {"image_size", c.data.gen.image_size},
        {"classes", c.data.gen.classes},
        {"defects_per_image", {c.data.gen.min_defects, c.data.gen.max_defects}},
        {"overlap_allowed", c.data.gen.overlap_allowed},
        {"noise_level", c.data.gen.noise_level},
        {"train_count", c.data.train_count},
        {"val_count", c.data.val_count},
        {"test_count", c.data.test_count},
        {"val_split", c.data.val_split},
        {"augment", c.data.augment}}},
      {"model",
       {{"encoder", encoder_name(c.model.encoder)},
        {"image_size", c.model.vit.image_size},
        {"patch_size", c.model.vit.patch_size},
        {"embed_dim", c.model.vit.embed_dim},
        {"num_heads", c.model.vit.num_heads},
        {"num_layers", c.model.vit.num_layers},
        {"mlp_ratio", c.model.vit.mlp_ratio},
        {"dropout", c.model.vit.dropout_rate},
        {"cnn_channels", c.model.head.cnn_channels},
        {"cnn_kernel", c.model.head.cnn_kernel},
        {"mlp_hidden", c.model.head.mlp_hidden},
        {"head_dropout", c.model.head.dropout_rate},
        {"num_anchors", c.model.head.num_anchors},
        {"num_classes", c.model.head.num_classes}}},
      {"anchors",
       {{"stride", c.grid.stride},
        {"scales", c.grid.scales},
        {"aspect_ratios", c.grid.aspect_ratios},
        {"upper", c.assign.upper},
        {"lower", c.assign.lower},
        {"force_match", c.assign.force_match}}},
      {"loss", {{"lambda", c.loss.lambda}, {"normalize_cce", c.loss.normalize_cce}}},
      {"optimizer",
       {{"lr", c.adam.lr},
        {"beta1", c.adam.beta1},
        {"beta2", c.adam.beta2},
        {"eps", c.adam.eps},
        {"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size}}},
      {"eval",
       {{"confidence_threshold", c.eval.predict.confidence_threshold},
        {"nms_iou", c.eval.predict.nms_iou},
        {"match_iou", c.eval.match_iou}}},
  };
}

}  // namespace defectvit
