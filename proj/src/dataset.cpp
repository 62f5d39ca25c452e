#include "defectvit/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "defectvit/errors.hpp"

namespace defectvit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const json& field(const json& obj, const char* key, const std::string& where, const fs::path& file) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw ParseError(file.string() + ": missing field " + where + "." + key);
  }
  return obj.at(key);
}

double number(const json& v, const std::string& where, const fs::path& file) {
  if (!v.is_number()) throw ParseError(file.string() + ": field " + where + " must be a number");
  return v.get<double>();
}

int integer(const json& v, const std::string& where, const fs::path& file) {
  if (!v.is_number_integer()) throw ParseError(file.string() + ": field " + where + " must be an integer");
  return v.get<int>();
}

std::size_t line_of(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

}  // namespace

std::uint64_t seed_from_id(const std::string& id) {
  const auto cut = id.find('_');
  if (cut == std::string::npos || cut == 0 || cut + 1 >= id.size()) return 0;
  const std::string head = id.substr(0, cut), tail = id.substr(cut + 1);
  auto digits = [](const std::string& s) { return std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; }); };
  if (!digits(head) || !digits(tail) || tail.size() > 19) return 0;
  return std::stoull(tail);
}

void write_split(const fs::path& root, const std::string& split, const std::vector<std::string>& classes,
                 const std::vector<SampleRecord>& records) {
  const fs::path dir = root / split;
  fs::create_directories(dir / "images");
  json samples = json::array();
  for (const auto& r : records) {
    json boxes = json::array();
    for (const auto& b : r.boxes) {
      const int c = b.class_id.value_or(-1);
      if (c < 0 || static_cast<std::size_t>(c) >= classes.size()) {
        throw ValidationError("sample " + r.id + ": box class " + std::to_string(c) + " outside the class list");
      }
      boxes.push_back({{"x1", b.x1}, {"y1", b.y1}, {"x2", b.x2}, {"y2", b.y2}, {"class", c}});
    }
    samples.push_back({{"id", r.id}, {"width", r.image.width}, {"height", r.image.height}, {"boxes", boxes}});
    write_png(dir / "images" / (r.id + ".png"), r.image);
  }
  const json doc = {{"classes", classes}, {"samples", samples}};
  std::ofstream out(dir / "annotations.json", std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir / "annotations.json").string());
  out << doc.dump(2) << '\n';
}

DatasetSplit load_split(const fs::path& root, const std::string& split, const std::vector<std::string>& expected_classes) {
  const fs::path dir = root / split;
  const fs::path file = dir / "annotations.json";
  DatasetSplit out;
  if (!fs::exists(file)) return out;

  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(file.string() + ":" + std::to_string(line_of(text, e.byte)) + ": " + e.what());
  }

  const json& classes = field(doc, "classes", "$", file);
  if (!classes.is_array()) throw ParseError(file.string() + ": field $.classes must be a list");
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (!classes[i].is_string()) throw ParseError(file.string() + ": field $.classes[" + std::to_string(i) + "] must be a string");
    out.classes.push_back(classes[i].get<std::string>());
  }
  if (!expected_classes.empty() && out.classes != expected_classes) {
    throw ValidationError(file.string() + ": class list does not match the configured classes");
  }

  const json& samples = field(doc, "samples", "$", file);
  if (!samples.is_array()) throw ParseError(file.string() + ": field $.samples must be a list");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string where = "$.samples[" + std::to_string(i) + "]";
    const json& s = samples[i];
    SampleRecord rec;
    const json& id = field(s, "id", where, file);
    if (!id.is_string()) throw ParseError(file.string() + ": field " + where + ".id must be a string");
    rec.id = id.get<std::string>();
    rec.seed = seed_from_id(rec.id);
    rec.split = split;
    const int width = integer(field(s, "width", where, file), where + ".width", file);
    const int height = integer(field(s, "height", where, file), where + ".height", file);
    const json& boxes = field(s, "boxes", where, file);
    if (!boxes.is_array()) throw ParseError(file.string() + ": field " + where + ".boxes must be a list");
    for (std::size_t j = 0; j < boxes.size(); ++j) {
      const std::string bw = where + ".boxes[" + std::to_string(j) + "]";
      const json& b = boxes[j];
      BBox box{number(field(b, "x1", bw, file), bw + ".x1", file), number(field(b, "y1", bw, file), bw + ".y1", file),
               number(field(b, "x2", bw, file), bw + ".x2", file), number(field(b, "y2", bw, file), bw + ".y2", file),
               integer(field(b, "class", bw, file), bw + ".class", file)};
      if (*box.class_id < 0 || static_cast<std::size_t>(*box.class_id) >= out.classes.size()) {
        throw ValidationError(file.string() + ": " + bw + ".class = " + std::to_string(*box.class_id) +
                              " is outside the " + std::to_string(out.classes.size()) + " declared classes");
      }
      if (!box.valid() || box.x1 < 0 || box.y1 < 0 || box.x2 > width || box.y2 > height) {
        throw ValidationError(file.string() + ": " + bw + " is empty or outside the " + std::to_string(width) + "x" +
                              std::to_string(height) + " image");
      }
      rec.boxes.push_back(box);
    }
    rec.image = read_png(dir / "images" / (rec.id + ".png"));
    if (rec.image.width != width || rec.image.height != height) {
      throw ValidationError(file.string() + ": " + where + " declares " + std::to_string(width) + "x" +
                            std::to_string(height) + " but the PNG is " + std::to_string(rec.image.width) + "x" +
                            std::to_string(rec.image.height));
    }
    out.records.push_back(std::move(rec));
  }
  return out;
}

std::vector<std::string> available_splits(const fs::path& root) {
  std::vector<std::string> out;
  if (!fs::is_directory(root)) return out;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "annotations.json")) out.push_back(e.path().filename().string());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace defectvit
