#include "defectvit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <thread>

#include "defectvit/errors.hpp"
#include "defectvit/rng.hpp"

namespace defectvit {

namespace {

constexpr double kPi = std::numbers::pi;
// Pixels above this coverage belong to the annotated box.
constexpr float kBoxAlpha = 0.02f;
constexpr double kMinBoxArea = 9.0;

using Gen = std::mt19937_64;

double uni(Gen& g, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(g); }

// Smooth lattice noise in [0, 1].
class ValueNoise {
 public:
  explicit ValueNoise(std::uint64_t key) : key_(key) {}

  double operator()(double x, double y) const {
    const double fx = std::floor(x), fy = std::floor(y);
    const double tx = smooth(x - fx), ty = smooth(y - fy);
    const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
    const double a = lattice(ix, iy), b = lattice(ix + 1, iy);
    const double c = lattice(ix, iy + 1), d = lattice(ix + 1, iy + 1);
    return (a + (b - a) * tx) + ((c + (d - c) * tx) - (a + (b - a) * tx)) * ty;
  }

  double fbm(double x, double y, int octaves) const {
    double sum = 0.0, amp = 0.5, norm = 0.0;
    for (int o = 0; o < octaves; ++o) {
      sum += amp * (*this)(x, y);
      norm += amp;
      x *= 2.0;
      y *= 2.0;
      amp *= 0.5;
    }
    return sum / norm;
  }

 private:
  static double smooth(double t) { return t * t * (3.0 - 2.0 * t); }
  double lattice(std::int64_t x, std::int64_t y) const {
    return rng::counter_uniform(key_, rng::mix64(static_cast<std::uint64_t>(x) * 0x9E3779B97F4A7C15ULL ^
                                                 static_cast<std::uint64_t>(y)));
  }
  std::uint64_t key_;
};

Image metal_texture(int size, Gen& g) {
  const ValueNoise coarse(g()), grain(g());
  const double base = uni(g, 0.38, 0.58);
  const bool horizontal = g() % 2 == 0;
  const double grain_len = uni(g, 12.0, 28.0);
  Image img(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double along = horizontal ? x : y, across = horizontal ? y : x;
      const double v = base + 0.08 * (coarse.fbm(x / 18.0, y / 18.0, 3) - 0.5) +
                       0.06 * (grain.fbm(along / grain_len, across / 1.3, 2) - 0.5);
      img.at(x, y) = static_cast<float>(v);
    }
  return img;
}

struct Layer {
  Image alpha;
  Image color;
};

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(px - (ax + t * vx), py - (ay + t * vy));
}

// Fraction of a pixel's 4x4 sub-samples for which inside(x, y) holds.
template <class Inside>
void rasterize_coverage(Image& alpha, float strength, const Inside& inside) {
  for (int y = 0; y < alpha.height; ++y)
    for (int x = 0; x < alpha.width; ++x) {
      int hits = 0;
      for (int sy = 0; sy < 4; ++sy)
        for (int sx = 0; sx < 4; ++sx) hits += inside(x + (sx + 0.5) / 4.0, y + (sy + 0.5) / 4.0) ? 1 : 0;
      alpha.at(x, y) = strength * static_cast<float>(hits) / 16.0f;
    }
}

bool point_in_polygon(double x, double y, const std::vector<std::pair<double, double>>& poly) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto [xi, yi] = poly[i];
    const auto [xj, yj] = poly[j];
    if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) in = !in;
  }
  return in;
}

Layer render(DefectKind kind, const Image& under, Gen& g) {
  const int size = under.width;
  const double k = size / 64.0;
  Layer L{Image(size, size), Image(size, size)};
  const double cx = uni(g, 0.1, 0.9) * size, cy = uni(g, 0.1, 0.9) * size;
  auto flat_color = [&](double c) { std::fill(L.color.pixels.begin(), L.color.pixels.end(), static_cast<float>(c)); };

  switch (kind) {
    case DefectKind::scratch: {
      const double len = uni(g, 10, 28) * k, th = uni(g, 0, kPi), hw = uni(g, 0.5, 0.9);
      const double ax = cx - 0.5 * len * std::cos(th), ay = cy - 0.5 * len * std::sin(th);
      const double bx = cx + 0.5 * len * std::cos(th), by = cy + 0.5 * len * std::sin(th);
      const float strength = static_cast<float>(uni(g, 0.8, 1.0));
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const double d = segment_distance(x + 0.5, y + 0.5, ax, ay, bx, by);
          L.alpha.at(x, y) = strength * static_cast<float>(std::clamp(hw + 0.5 - d, 0.0, 1.0));
        }
      flat_color(uni(g, 0.85, 1.0));
      break;
    }
    case DefectKind::welding_line: {
      const double len = uni(g, 24, 44) * k, hw = uni(g, 1.5, 2.5) * k;
      const double th = (g() % 2 ? 0.0 : kPi / 2) + uni(g, -0.17, 0.17);
      const double ux = std::cos(th), uy = std::sin(th);
      const double ax = cx - 0.5 * len * ux, ay = cy - 0.5 * len * uy;
      const double bx = cx + 0.5 * len * ux, by = cy + 0.5 * len * uy;
      const double period = uni(g, 2.5, 4.0);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          const double px = x + 0.5, py = y + 0.5;
          const double d = segment_distance(px, py, ax, ay, bx, by);
          const double t = (px - ax) * ux + (py - ay) * uy;
          const double ripple = 0.8 + 0.2 * std::cos(2 * kPi * t / period);
          L.alpha.at(x, y) = static_cast<float>(ripple * std::clamp(hw + 0.5 - d, 0.0, 1.0));
        }
      flat_color(uni(g, 0.12, 0.25));
      break;
    }
    case DefectKind::inclusion: {
      const int n = 6 + static_cast<int>(g() % 4);
      const double r = uni(g, 3, 7) * k, phase = uni(g, 0, 2 * kPi);
      std::vector<std::pair<double, double>> poly;
      for (int i = 0; i < n; ++i) {
        const double a = phase + 2 * kPi * i / n, ri = r * uni(g, 0.5, 1.0);
        poly.emplace_back(cx + ri * std::cos(a), cy + ri * std::sin(a));
      }
      rasterize_coverage(L.alpha, 1.0f, [&](double x, double y) { return point_in_polygon(x, y, poly); });
      flat_color(uni(g, 0.02, 0.1));
      break;
    }
    case DefectKind::water_spot:
    case DefectKind::oil_spot: {
      const bool oil = kind == DefectKind::oil_spot;
      const double a = uni(g, oil ? 4 : 3, oil ? 10 : 9) * k, b = uni(g, 3, 9) * k, rot = uni(g, 0, kPi);
      const double c = std::cos(rot), s = std::sin(rot);
      for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
          double acc = 0.0;
          for (int sy = 0; sy < 4; ++sy)
            for (int sx = 0; sx < 4; ++sx) {
              const double dx = x + (sx + 0.5) / 4 - cx, dy = y + (sy + 0.5) / 4 - cy;
              const double u = (dx * c + dy * s) / a, v = (-dx * s + dy * c) / b;
              const double rho = std::sqrt(u * u + v * v);
              if (rho >= 1.0) continue;
              // water: soft rim fading outward; oil: dense core with darker ring
              acc += oil ? 0.55 + 0.4 * rho * rho : 0.7 * std::min(1.0, (1.0 - rho) / 0.35 + 0.3);
            }
          L.alpha.at(x, y) = static_cast<float>(acc / 16.0);
        }
      flat_color(oil ? uni(g, 0.08, 0.2) : uni(g, 0.8, 0.95));
      break;
    }
    case DefectKind::crescent_gap: {
      const double r = uni(g, 6, 12) * k, w = uni(g, 1.5, 3.0) * k;
      const double start = uni(g, 0, 2 * kPi), span = uni(g, 1.75, 3.8);
      rasterize_coverage(L.alpha, 1.0f, [&](double x, double y) {
        const double dx = x - cx, dy = y - cy, d = std::hypot(dx, dy);
        if (d < r - w / 2 || d > r + w / 2) return false;
        double ang = std::atan2(dy, dx) - start;
        ang -= 2 * kPi * std::floor(ang / (2 * kPi));
        return ang <= span;
      });
      flat_color(uni(g, 0.03, 0.15));
      break;
    }
    case DefectKind::texture_variation:
    case DefectKind::color_variation: {
      const double hw = uni(g, 5, 12) * k, hh = uni(g, 5, 12) * k;
      rasterize_coverage(L.alpha, kind == DefectKind::texture_variation ? 0.9f : 0.75f, [&](double x, double y) {
        return std::fabs(x - cx) <= hw && std::fabs(y - cy) <= hh;
      });
      if (kind == DefectKind::texture_variation) {
        const ValueNoise n(g());
        const double base = uni(g, 0.3, 0.7);
        for (int y = 0; y < size; ++y)
          for (int x = 0; x < size; ++x) L.color.at(x, y) = static_cast<float>(base + 0.5 * (n(x / 1.5, y / 1.5) - 0.5));
      } else {
        flat_color(g() % 2 ? uni(g, 0.8, 0.95) : uni(g, 0.05, 0.2));
      }
      break;
    }
  }
  return L;
}

// Tight box over pixels with alpha above kBoxAlpha; invalid when none.
BBox support_box(const Image& alpha) {
  int x1 = alpha.width, y1 = alpha.height, x2 = -1, y2 = -1;
  for (int y = 0; y < alpha.height; ++y)
    for (int x = 0; x < alpha.width; ++x)
      if (alpha.at(x, y) > kBoxAlpha) {
        x1 = std::min(x1, x);
        y1 = std::min(y1, y);
        x2 = std::max(x2, x);
        y2 = std::max(y2, y);
      }
  if (x2 < 0) return {};
  return {static_cast<double>(x1), static_cast<double>(y1), static_cast<double>(x2 + 1), static_cast<double>(y2 + 1),
          std::nullopt};
}

float sample_bilinear(const Image& img, double sx, double sy) {
  sx = std::clamp(sx, 0.0, static_cast<double>(img.width - 1));
  sy = std::clamp(sy, 0.0, static_cast<double>(img.height - 1));
  const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
  const int x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
  const double tx = sx - x0, ty = sy - y0;
  const double top = img.at(x0, y0) + (img.at(x1, y0) - img.at(x0, y0)) * tx;
  const double bot = img.at(x0, y1) + (img.at(x1, y1) - img.at(x0, y1)) * tx;
  return static_cast<float>(top + (bot - top) * ty);
}

bool boxes_ok(const std::vector<BBox>& boxes) {
  return std::all_of(boxes.begin(), boxes.end(), [](const BBox& b) { return b.valid() && b.area() >= kMinBoxArea; });
}

}  // namespace

const std::vector<std::string>& defect_class_names() {
  static const std::vector<std::string> names{"scratch",      "welding_line", "inclusion",         "water_spot",
                                              "oil_spot",     "crescent_gap", "texture_variation", "color_variation"};
  return names;
}

DefectKind defect_kind(const std::string& name) {
  const auto& names = defect_class_names();
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw ConfigError("unknown defect class '" + name + "'");
  return static_cast<DefectKind>(it - names.begin());
}

void GenConfig::validate() const {
  if (image_size < 16) throw ConfigError("data: image_size must be at least 16");
  if (classes.empty()) throw ConfigError("data: at least one defect class is required");
  for (const auto& c : classes) defect_kind(c);
  if (min_defects < 1 || max_defects < min_defects) {
    throw ConfigError("data: defects_per_image range [" + std::to_string(min_defects) + ", " +
                      std::to_string(max_defects) + "] is invalid");
  }
  if (!(noise_level >= 0)) throw ConfigError("data: noise_level must be non-negative");
}

SampleRecord generate_sample(const GenConfig& cfg, std::uint64_t sample_seed, RenderTrace* trace) {
  cfg.validate();
  Gen g(rng::derive({cfg.seed, sample_seed}));
  const int size = cfg.image_size;
  SampleRecord rec;
  rec.seed = sample_seed;
  Image background = metal_texture(size, g);
  Image img = background;

  const int count = std::uniform_int_distribution<int>(cfg.min_defects, cfg.max_defects)(g);
  std::vector<Image> alphas;
  for (int d = 0; d < count; ++d) {
    for (int attempt = 0;; ++attempt) {
      const int cls = std::uniform_int_distribution<int>(0, static_cast<int>(cfg.classes.size()) - 1)(g);
      Layer layer = render(defect_kind(cfg.classes[static_cast<std::size_t>(cls)]), img, g);
      BBox box = support_box(layer.alpha);
      if (!box.valid() || box.area() < kMinBoxArea) continue;
      const bool clash = !cfg.overlap_allowed && attempt < 1000 &&
                         std::any_of(rec.boxes.begin(), rec.boxes.end(), [&](const BBox& b) { return iou(b, box) > 0; });
      if (clash) continue;
      for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        const float a = layer.alpha.pixels[i];
        img.pixels[i] = img.pixels[i] * (1.0f - a) + layer.color.pixels[i] * a;
      }
      box.class_id = cls;
      rec.boxes.push_back(box);
      if (trace != nullptr) alphas.push_back(std::move(layer.alpha));
      break;
    }
  }
  if (trace != nullptr) {
    trace->background = background;
    trace->clean = img;
    trace->alphas = std::move(alphas);
  }
  std::normal_distribution<double> noise(0.0, cfg.noise_level);
  for (auto& v : img.pixels) v = static_cast<float>(v + (cfg.noise_level > 0 ? noise(g) : 0.0));
  quantize_8bit(img);
  rec.image = std::move(img);
  return rec;
}

std::uint64_t split_seed(const std::string& split, std::size_t index) {
  constexpr std::uint64_t kRange = 1'000'000'000ULL;
  std::uint64_t base = 0;
  if (split == "train") base = 0;
  else if (split == "val") base = kRange;
  else if (split == "test") base = 2 * kRange;
  else throw ConfigError("unknown split '" + split + "' (expected train, val or test)");
  if (index >= kRange) throw ConfigError("split index out of range");
  return base + index;
}

std::vector<SampleRecord> generate_split(const GenConfig& cfg, const std::string& split, std::size_t count,
                                         int threads) {
  cfg.validate();
  std::vector<SampleRecord> out(count);
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < count; i += step) {
      const std::uint64_t seed = split_seed(split, i);
      out[i] = generate_sample(cfg, seed);
      char id[48];
      std::snprintf(id, sizeof id, "%05zu_%llu", i, static_cast<unsigned long long>(seed));
      out[i].id = id;
      out[i].split = split;
    }
  };
  const auto n = static_cast<std::size_t>(std::max(1, threads));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(work, t, n);
  work(0, n);
  for (auto& t : pool) t.join();
  return out;
}

Image resize_bilinear(const Image& image, int width, int height) {
  if (image.empty() || width <= 0 || height <= 0) throw ContractError("resize: zero-size image");
  if (image.width == width && image.height == height) return image;
  Image out(width, height);
  const double fx = static_cast<double>(image.width) / width, fy = static_cast<double>(image.height) / height;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) out.at(x, y) = sample_bilinear(image, (x + 0.5) * fx - 0.5, (y + 0.5) * fy - 0.5);
  return out;
}

Tensor preprocess(const Image& image, int target_size) {
  if (image.empty() || image.width <= 0 || image.height <= 0) throw ContractError("preprocess: zero-size image");
  const Image r = resize_bilinear(image, target_size, target_size);
  std::vector<Scalar> v(r.pixels.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (std::clamp<double>(r.pixels[i], 0.0, 1.0) - 0.5) / 0.25;
  const auto s = static_cast<std::size_t>(target_size);
  return Tensor({1, s, s}, std::move(v));
}

std::vector<BBox> rescale_boxes(std::span<const BBox> boxes, int from_w, int from_h, int to_w, int to_h) {
  const double sx = static_cast<double>(to_w) / from_w, sy = static_cast<double>(to_h) / from_h;
  std::vector<BBox> out;
  for (const auto& b : boxes) {
    if (sx == 1.0 && sy == 1.0) {
      out.push_back(b);
      continue;
    }
    out.push_back({b.x1 * sx, b.y1 * sy, b.x2 * sx, b.y2 * sy, b.class_id});
  }
  return out;
}

SampleRecord hflip(const SampleRecord& s) {
  SampleRecord o = s;
  const int w = s.image.width;
  for (int y = 0; y < s.image.height; ++y)
    for (int x = 0; x < w; ++x) o.image.at(x, y) = s.image.at(w - 1 - x, y);
  for (auto& b : o.boxes) b = {w - b.x2, b.y1, w - b.x1, b.y2, b.class_id};
  return o;
}

SampleRecord vflip(const SampleRecord& s) {
  SampleRecord o = s;
  const int h = s.image.height;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < s.image.width; ++x) o.image.at(x, y) = s.image.at(x, h - 1 - y);
  for (auto& b : o.boxes) b = {b.x1, h - b.y2, b.x2, h - b.y1, b.class_id};
  return o;
}

SampleRecord rotate90(const SampleRecord& s, int quarter_turns) {
  if (s.image.width != s.image.height) throw ContractError("rotate90: image must be square");
  SampleRecord o = s;
  const int n = s.image.width;
  for (int t = 0; t < ((quarter_turns % 4) + 4) % 4; ++t) {
    const SampleRecord prev = o;
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) o.image.at(x, y) = prev.image.at(y, n - 1 - x);
    for (auto& b : o.boxes) b = {n - b.y2, b.x1, n - b.y1, b.x2, b.class_id};
  }
  return o;
}

SampleRecord scale_jitter(const SampleRecord& s, double factor) {
  if (!(factor > 0)) throw ParameterError("scale_jitter: factor must be positive");
  SampleRecord o = s;
  const double cx = s.image.width / 2.0, cy = s.image.height / 2.0;
  for (int y = 0; y < s.image.height; ++y)
    for (int x = 0; x < s.image.width; ++x)
      o.image.at(x, y) = sample_bilinear(s.image, cx + (x + 0.5 - cx) / factor - 0.5, cy + (y + 0.5 - cy) / factor - 0.5);
  for (auto& b : o.boxes) {
    b = BBox{cx + (b.x1 - cx) * factor, cy + (b.y1 - cy) * factor, cx + (b.x2 - cx) * factor,
             cy + (b.y2 - cy) * factor, b.class_id}
            .clipped(s.image.width, s.image.height);
  }
  return o;
}

SampleRecord augment(const SampleRecord& s, std::mt19937_64& rng) {
  for (int attempt = 0; attempt < 16; ++attempt) {
    SampleRecord o = s;
    if (rng() % 2) o = hflip(o);
    if (rng() % 2) o = vflip(o);
    if (o.image.width == o.image.height) o = rotate90(o, static_cast<int>(rng() % 4));
    o = scale_jitter(o, uni(rng, 0.9, 1.1));
    if (boxes_ok(o.boxes)) return o;
  }
  return s;
}

}  // namespace defectvit
