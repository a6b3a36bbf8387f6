// Copyright 2026 The MMChange Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef MMCHANGE_DATA_HPP_
#define MMCHANGE_DATA_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmchange/encoders.hpp"
#include "mmchange/image_io.hpp"
#include "mmchange/random.hpp"

namespace mmchange {

/// Binary H x W label grid, 1 = change.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> labels;

  Mask() = default;
  Mask(int h, int w) : height(h), width(w), labels(static_cast<std::size_t>(h) * w, 0) {}
  std::uint8_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count() const { return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1)); }
  bool operator==(const Mask&) const = default;
};

/// RGB image as [1, 3, H, W], values in [0, 1].
using RgbImage = Tensor<float>;

struct BiTemporalSample {
  std::string id;
  RgbImage image_a;
  RgbImage image_b;
  std::string caption_a;
  std::string caption_b;
  Mask mask;

  int height() const { return image_a.h(); }
  int width() const { return image_a.w(); }
};

// ---------------------------------------------------------------------------
// Procedural scenes

enum class ObjectKind { kBuilding, kRoad, kVegetation };

struct Point {
  double x, y;
};

struct SceneObject {
  ObjectKind kind;
  std::vector<Point> footprint;  // closed polygon, pixel coordinates
  std::array<float, 3> color;
};

struct SceneChange {
  int object;
  bool added;  // true: only in the second image; false: only in the first
};

struct SceneSpec {
  std::uint64_t seed = 0;
  int size = 0;
  std::array<float, 3> ground{};
  float texture = 0;        // amplitude of the background pattern
  float pixel_noise = 0;    // per-image sensor noise
  float illumination = 0;   // brightness offset of the second image
  float season_shift = 0;   // vegetation tint change in the second image
  std::vector<SceneObject> objects;
  std::vector<SceneChange> changes;

  bool changed(int index) const {
    return std::any_of(changes.begin(), changes.end(), [&](const SceneChange& c) { return c.object == index; });
  }
  /// Whether object `index` is drawn in the first (false) or second (true) image.
  bool present(int index, bool second) const {
    for (const auto& c : changes)
      if (c.object == index) return c.added == second;
    return true;
  }
};

/// Even-odd test at the pixel centre.
inline bool inside_polygon(const std::vector<Point>& poly, double px, double py) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Point& a = poly[i];
    const Point& b = poly[j];
    if ((a.y > py) != (b.y > py) && px < (b.x - a.x) * (py - a.y) / (b.y - a.y) + a.x) in = !in;
  }
  return in;
}

inline Mask rasterize(const std::vector<Point>& poly, int size) {
  Mask m(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) m.at(y, x) = inside_polygon(poly, x + 0.5, y + 0.5) ? 1 : 0;
  return m;
}

/// Union of the changed objects' footprints.
inline Mask change_mask(const SceneSpec& scene) {
  Mask m(scene.size, scene.size);
  for (const auto& c : scene.changes) {
    Mask fp = rasterize(scene.objects[c.object].footprint, scene.size);
    for (std::size_t i = 0; i < m.labels.size(); ++i) m.labels[i] |= fp.labels[i];
  }
  return m;
}

namespace detail {

inline std::vector<Point> rect(double x0, double y0, double w, double h) {
  return {{x0, y0}, {x0 + w, y0}, {x0 + w, y0 + h}, {x0, y0 + h}};
}

inline std::vector<Point> blob(Rng& rng, double cx, double cy, double radius) {
  std::vector<Point> p;
  const int n = 6;
  for (int i = 0; i < n; ++i) {
    const double a = 2.0 * 3.14159265358979323846 * (i + rng.uniform(-0.2, 0.2)) / n;
    const double r = radius * rng.uniform(0.75, 1.0);
    p.push_back({cx + r * std::cos(a), cy + r * std::sin(a)});
  }
  return p;
}

inline std::string plural(int n, const char* one, const char* many) {
  return std::to_string(n) + " " + (n == 1 ? one : many);
}

}  // namespace detail

/// Random scene of buildings, roads and vegetation with 1-3 changed objects.
inline SceneSpec make_scene(std::uint64_t seed, int size) {
  Rng rng(seed);
  SceneSpec s;
  s.seed = seed;
  s.size = size;
  const float soil = static_cast<float>(rng.uniform(0.35, 0.5));
  s.ground = {soil, soil + static_cast<float>(rng.uniform(0.0, 0.08)), soil - 0.08f};
  s.texture = static_cast<float>(rng.uniform(0.02, 0.06));
  s.pixel_noise = 0.02f;
  s.illumination = static_cast<float>(rng.uniform(-0.08, 0.08));
  s.season_shift = static_cast<float>(rng.uniform(-0.1, 0.1));
  const double scale = size / 64.0;

  auto building = [&]() {
    const double w = 4 * rng.uniform_int(3, 5) * scale, h = 4 * rng.uniform_int(3, 5) * scale;
    const double x = 4 * rng.uniform_int(0, static_cast<int>((size - w) / 4)),
                 y = 4 * rng.uniform_int(0, static_cast<int>((size - h) / 4));
    const float g = static_cast<float>(rng.uniform(0.6, 0.9));
    const bool red = rng.coin(0.3);
    return SceneObject{ObjectKind::kBuilding, detail::rect(x, y, w, h),
                       {red ? 0.75f : g, red ? 0.35f : g, red ? 0.3f : g + 0.03f}};
  };
  auto road = [&]() {
    const double width = 8 * scale;
    const double at = 4 * rng.uniform_int(0, static_cast<int>((size - width) / 4));
    const float g = static_cast<float>(rng.uniform(0.15, 0.25));
    auto fp = rng.coin() ? detail::rect(0, at, size, width) : detail::rect(at, 0, width, size);
    return SceneObject{ObjectKind::kRoad, fp, {g, g, g}};
  };
  auto vegetation = [&]() {
    const double r = rng.uniform(5, 10) * scale;
    return SceneObject{ObjectKind::kVegetation, detail::blob(rng, rng.uniform(r, size - r), rng.uniform(r, size - r), r),
                       {0.15f, static_cast<float>(rng.uniform(0.4, 0.6)), 0.15f}};
  };

  if (rng.coin(0.6)) s.objects.push_back(road());
  for (int i = rng.uniform_int(1, 3); i > 0; --i) s.objects.push_back(vegetation());
  for (int i = rng.uniform_int(2, 4); i > 0; --i) s.objects.push_back(building());
  // Changed objects are appended last so they are drawn on top.
  const int changes = rng.uniform_int(1, 3);
  for (int i = 0; i < changes; ++i) {
    s.objects.push_back(rng.coin(0.15) ? road() : building());
    s.changes.push_back({static_cast<int>(s.objects.size()) - 1, rng.coin()});
  }
  return s;
}

/// Template caption of the objects visible in one date.
inline std::string describe_scene(const SceneSpec& scene, bool second) {
  int counts[3] = {0, 0, 0};
  for (std::size_t i = 0; i < scene.objects.size(); ++i)
    if (scene.present(static_cast<int>(i), second)) ++counts[static_cast<int>(scene.objects[i].kind)];
  std::ostringstream os;
  os << "These are " << detail::plural(counts[0], "building", "buildings") << ", "
     << detail::plural(counts[1], "road", "roads") << " and " << detail::plural(counts[2], "patch", "patches")
     << " of vegetation";
  return os.str();
}

/// Render one date of a scene.
inline RgbImage render_scene(const SceneSpec& scene, bool second) {
  const int n = scene.size;
  RgbImage img(1, 3, n, n);
  Rng noise(derive_seed({scene.seed, second ? 2u : 1u}));
  Rng tex(derive_seed({scene.seed, 7u}));  // same ground pattern in both dates
  const double fx = tex.uniform(0.15, 0.4), fy = tex.uniform(0.15, 0.4), ph = tex.uniform(0, 6.28);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const float t = scene.texture * static_cast<float>(std::sin(fx * x + ph) * std::cos(fy * y));
      for (int c = 0; c < 3; ++c) img(0, c, y, x) = scene.ground[c] + t;
    }
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    if (!scene.present(static_cast<int>(i), second)) continue;
    const auto& obj = scene.objects[i];
    auto color = obj.color;
    if (second && obj.kind == ObjectKind::kVegetation && !scene.changed(static_cast<int>(i))) {
      color[0] += scene.season_shift;
      color[1] -= 0.5f * scene.season_shift;
    }
    Mask fp = rasterize(obj.footprint, n);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x)
        if (fp.at(y, x))
          for (int c = 0; c < 3; ++c) img(0, c, y, x) = color[c];
  }
  const float shift = second ? scene.illumination : 0.0f;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        float& v = img(0, c, y, x);
        v = std::clamp(v + shift + scene.pixel_noise * static_cast<float>(noise.normal()), 0.0f, 1.0f);
      }
  return img;
}

inline BiTemporalSample sample_from_scene(const SceneSpec& scene, std::string id) {
  return {std::move(id), render_scene(scene, false), render_scene(scene, true), describe_scene(scene, false),
          describe_scene(scene, true), change_mask(scene)};
}

/// Per-sample scene seed; generation order never matters.
inline std::uint64_t sample_seed(std::uint64_t dataset_seed, std::uint64_t index) {
  return derive_seed({dataset_seed, index});
}

inline std::string sample_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%05zu", index);
  return buf;
}

// ---------------------------------------------------------------------------
// On-disk layout: <root>/{A,B,label}/<id>.png, captions.jsonl, manifest.json

inline constexpr int kDatasetFormatVersion = 1;

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Raster to_raster(const RgbImage& img) {
  Raster r(img.h(), img.w(), 3);
  for (int y = 0; y < img.h(); ++y)
    for (int x = 0; x < img.w(); ++x)
      for (int c = 0; c < 3; ++c)
        r.at(y, x)[c] = static_cast<std::uint8_t>(std::lround(std::clamp(img(0, c, y, x), 0.0f, 1.0f) * 255.0f));
  return r;
}

inline RgbImage from_raster(const Raster& r) {
  RgbImage img(1, 3, r.height, r.width);
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x)
      for (int c = 0; c < 3; ++c) img(0, c, y, x) = r.at(y, x)[c] / 255.0f;
  return img;
}

inline Raster mask_raster(const Mask& m) {
  Raster r(m.height, m.width, 1);
  for (std::size_t i = 0; i < m.labels.size(); ++i) r.pixels[i] = m.labels[i] ? 255 : 0;
  return r;
}

/// Any nonzero label pixel counts as change.
inline Mask mask_from_raster(const Raster& r) {
  Mask m(r.height, r.width);
  for (std::size_t i = 0; i < m.labels.size(); ++i) m.labels[i] = r.pixels[i] > 127 ? 1 : 0;
  return m;
}

struct DatasetManifest {
  std::size_t count = 0;
  int size = 0;
  std::uint64_t seed = 0;
  int format_version = kDatasetFormatVersion;
};

inline void write_sample(const std::filesystem::path& root, const BiTemporalSample& s) {
  write_png((root / "A" / (s.id + ".png")).string(), to_raster(s.image_a));
  write_png((root / "B" / (s.id + ".png")).string(), to_raster(s.image_b));
  write_png((root / "label" / (s.id + ".png")).string(), mask_raster(s.mask));
}

/// Generate `count` synthetic samples of `size` x `size` under `out_dir`.
inline DatasetManifest generate_dataset(std::uint64_t seed, std::size_t count, int size,
                                        const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  if (size <= 0 || size % 32 != 0) throw DatasetError("dataset size must be a positive multiple of 32");
  std::error_code ec;
  for (const char* sub : {"A", "B", "label"}) {
    fs::create_directories(out_dir / sub, ec);
    if (ec) throw DatasetError("cannot create " + (out_dir / sub).string() + ": " + ec.message());
  }
  CaptionMap captions;
  for (std::size_t i = 0; i < count; ++i) {
    BiTemporalSample s = sample_from_scene(make_scene(sample_seed(seed, i), size), sample_id(i));
    write_sample(out_dir, s);
    captions.emplace(s.id, CaptionPair{s.id, s.caption_a, s.caption_b});
  }
  save_captions((out_dir / "captions.jsonl").string(), captions);
  DatasetManifest m{count, size, seed, kDatasetFormatVersion};
  nlohmann::ordered_json j;
  j["count"] = m.count;
  j["size"] = m.size;
  j["seed"] = m.seed;
  j["format_version"] = m.format_version;
  std::ofstream mf(out_dir / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!mf) throw DatasetError("cannot write manifest in " + out_dir.string());
  mf << j.dump(2) << '\n';
  return m;
}

inline DatasetManifest read_manifest(const std::filesystem::path& root) {
  std::ifstream in(root / "manifest.json");
  if (!in) throw DatasetError("missing manifest.json in " + root.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    return {j.at("count").get<std::size_t>(), j.at("size").get<int>(), j.at("seed").get<std::uint64_t>(),
            j.at("format_version").get<int>()};
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError("bad manifest in " + root.string() + ": " + e.what());
  }
}

/// Load a dataset directory. Sample ids come from A/*.png; captions are
/// attached when captions.jsonl lists the id (otherwise left empty).
inline std::vector<BiTemporalSample> load_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root / "A")) throw DatasetError("no A/ directory under " + root.string());
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(root / "A"))
    if (e.path().extension() == ".png") ids.push_back(e.path().stem().string());
  std::sort(ids.begin(), ids.end());
  CaptionMap captions;
  if (fs::exists(root / "captions.jsonl")) captions = load_captions((root / "captions.jsonl").string());
  std::vector<BiTemporalSample> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    BiTemporalSample s;
    s.id = id;
    s.image_a = from_raster(read_png((root / "A" / (id + ".png")).string(), 3));
    s.image_b = from_raster(read_png((root / "B" / (id + ".png")).string(), 3));
    s.mask = mask_from_raster(read_png((root / "label" / (id + ".png")).string(), 1));
    if (s.image_a.shape() != s.image_b.shape() || s.mask.height != s.image_a.h() || s.mask.width != s.image_a.w())
      throw DatasetError("sample " + id + ": image/label dimensions disagree");
    if (auto it = captions.find(id); it != captions.end()) {
      s.caption_a = it->second.t1;
      s.caption_b = it->second.t2;
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation and perturbation

struct AugmentConfig {
  bool flip = true;
  bool temporal_swap = true;
  double crop_probability = 0.0;
  int crop_size = 0;  // side of the random crop, resized back to full size
};

namespace detail {

inline void flip_image(RgbImage& img, bool horizontal) {
  const int h = img.h(), w = img.w();
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < (horizontal ? h : h / 2); ++y)
      for (int x = 0; x < (horizontal ? w / 2 : w); ++x) {
        if (horizontal) std::swap(img(0, c, y, x), img(0, c, y, w - 1 - x));
        else std::swap(img(0, c, y, x), img(0, c, h - 1 - y, x));
      }
}

inline void flip_mask(Mask& m, bool horizontal) {
  for (int y = 0; y < (horizontal ? m.height : m.height / 2); ++y)
    for (int x = 0; x < (horizontal ? m.width / 2 : m.width); ++x) {
      if (horizontal) std::swap(m.at(y, x), m.at(y, m.width - 1 - x));
      else std::swap(m.at(y, x), m.at(m.height - 1 - y, x));
    }
}

/// Bilinear resample of a crop back to full size (half-pixel centres).
inline RgbImage crop_resize(const RgbImage& img, int y0, int x0, int side) {
  const int h = img.h(), w = img.w();
  RgbImage out(1, 3, h, w);
  for (int y = 0; y < h; ++y) {
    const double sy = std::clamp((y + 0.5) * side / h - 0.5, 0.0, side - 1.0);
    const int iy = std::min(static_cast<int>(sy), side - 1), jy = std::min(iy + 1, side - 1);
    const float ly = static_cast<float>(sy - iy);
    for (int x = 0; x < w; ++x) {
      const double sx = std::clamp((x + 0.5) * side / w - 0.5, 0.0, side - 1.0);
      const int ix = std::min(static_cast<int>(sx), side - 1), jx = std::min(ix + 1, side - 1);
      const float lx = static_cast<float>(sx - ix);
      for (int c = 0; c < 3; ++c) {
        auto v = [&](int yy, int xx) { return img(0, c, y0 + yy, x0 + xx); };
        const float top = v(iy, ix) + (v(iy, jx) - v(iy, ix)) * lx;
        const float bot = v(jy, ix) + (v(jy, jx) - v(jy, ix)) * lx;
        out(0, c, y, x) = top + (bot - top) * ly;
      }
    }
  }
  return out;
}

/// Nearest-neighbour resample for labels.
inline Mask crop_resize(const Mask& m, int y0, int x0, int side) {
  Mask out(m.height, m.width);
  for (int y = 0; y < m.height; ++y) {
    const int sy = std::min(side - 1, static_cast<int>((y + 0.5) * side / m.height));
    for (int x = 0; x < m.width; ++x) {
      const int sx = std::min(side - 1, static_cast<int>((x + 0.5) * side / m.width));
      out.at(y, x) = m.at(y0 + sy, x0 + sx);
    }
  }
  return out;
}

}  // namespace detail

/// Exchange the two dates (images and captions); the mask is unchanged.
inline BiTemporalSample temporal_swap(BiTemporalSample s) {
  std::swap(s.image_a, s.image_b);
  std::swap(s.caption_a, s.caption_b);
  return s;
}

/// Random flips, crop-and-resize and temporal swap. All geometric steps are
/// applied identically to both images and the mask.
inline BiTemporalSample augment(BiTemporalSample s, Rng& rng, const AugmentConfig& cfg) {
  if (cfg.crop_probability > 0.0) {
    if (cfg.crop_size <= 0 || cfg.crop_size > s.height() || cfg.crop_size > s.width())
      throw DatasetError("crop size " + std::to_string(cfg.crop_size) + " does not fit a " +
                         std::to_string(s.height()) + "x" + std::to_string(s.width()) + " sample");
  }
  if (cfg.flip) {
    for (bool horizontal : {true, false}) {
      if (!rng.coin()) continue;
      detail::flip_image(s.image_a, horizontal);
      detail::flip_image(s.image_b, horizontal);
      detail::flip_mask(s.mask, horizontal);
    }
  }
  if (cfg.crop_probability > 0.0 && rng.coin(cfg.crop_probability)) {
    const int y0 = rng.uniform_int(0, s.height() - cfg.crop_size);
    const int x0 = rng.uniform_int(0, s.width() - cfg.crop_size);
    s.image_a = detail::crop_resize(s.image_a, y0, x0, cfg.crop_size);
    s.image_b = detail::crop_resize(s.image_b, y0, x0, cfg.crop_size);
    s.mask = detail::crop_resize(s.mask, y0, x0, cfg.crop_size);
  }
  if (cfg.temporal_swap && rng.coin()) s = temporal_swap(std::move(s));
  return s;
}

struct Perturbation {
  double noise_sigma = 0.0;
  double brightness = 0.0;
  double contrast = 1.0;

  bool identity() const { return noise_sigma == 0.0 && brightness == 0.0 && contrast == 1.0; }
};

/// Illumination x -> clip(contrast (x - 0.5) + 0.5 + brightness), then
/// additive Gaussian noise, clipped to [0, 1]. Applied to both dates with
/// independent noise; labels and captions are untouched.
inline BiTemporalSample perturb(BiTemporalSample s, const Perturbation& p, Rng& rng) {
  require(p.noise_sigma >= 0.0, "perturb: noise sigma must be non-negative");
  if (p.identity()) return s;
  for (RgbImage* img : {&s.image_a, &s.image_b}) {
    for (auto& v : img->vec()) {
      double x = std::clamp(p.contrast * (v - 0.5) + 0.5 + p.brightness, 0.0, 1.0);
      if (p.noise_sigma > 0.0) x = std::clamp(x + p.noise_sigma * rng.normal(), 0.0, 1.0);
      v = static_cast<float>(x);
    }
  }
  return s;
}

}  // namespace mmchange

#endif  // MMCHANGE_DATA_HPP_
