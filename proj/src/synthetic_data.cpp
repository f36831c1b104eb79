#include "mtl/synthetic_data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "mtl/binary_io.hpp"
#include "mtl/error.hpp"
#include "mtl/rng.hpp"

namespace mtl {

namespace fs = std::filesystem;

void SceneSpec::validate() const {
  if (height == 0 || width == 0 || height % 8 != 0 || width % 8 != 0) {
    throw ConfigError("scene resolution must be positive and divisible by 8, got " + std::to_string(height) + "x" +
                      std::to_string(width));
  }
  if (num_classes < 2 || num_classes > 20) throw ConfigError("num_classes must be in [2, 20]");
  if (min_objects > max_objects) throw ConfigError("min_objects exceeds max_objects");
  if (min_size == 0 || min_size > max_size) throw ConfigError("object size range is invalid");
  if (!(depth_min > 0.0) || !(depth_min <= depth_max)) throw ConfigError("depth range must satisfy 0 < min <= max");
  if (!(background_depth > 0.0)) throw ConfigError("background_depth must be positive");
  if (!(moving_fraction >= 0.0 && moving_fraction <= 1.0)) throw ConfigError("moving_fraction must be in [0, 1]");
  if (moving_fraction > 0.0 && max_displacement < 1) {
    throw ConfigError("max_displacement must be >= 1 when objects move");
  }
  if (!(max_overlap >= 0.0 && max_overlap <= 1.0)) throw ConfigError("max_overlap must be in [0, 1]");
  if (!(noise >= 0.0)) throw ConfigError("noise must be non-negative");
}

nlohmann::json scene_spec_to_json(const SceneSpec& s) {
  return {{"height", s.height},
          {"width", s.width},
          {"num_classes", s.num_classes},
          {"min_objects", s.min_objects},
          {"max_objects", s.max_objects},
          {"min_size", s.min_size},
          {"max_size", s.max_size},
          {"depth_min", s.depth_min},
          {"depth_max", s.depth_max},
          {"background_depth", s.background_depth},
          {"moving_fraction", s.moving_fraction},
          {"max_displacement", s.max_displacement},
          {"max_overlap", s.max_overlap},
          {"max_retries", s.max_retries},
          {"noise", s.noise},
          {"seed", s.seed}};
}

SceneSpec scene_spec_from_json(const nlohmann::json& j, SceneSpec s) {
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("height", s.height);
    get("width", s.width);
    get("num_classes", s.num_classes);
    get("min_objects", s.min_objects);
    get("max_objects", s.max_objects);
    get("min_size", s.min_size);
    get("max_size", s.max_size);
    get("depth_min", s.depth_min);
    get("depth_max", s.depth_max);
    get("background_depth", s.background_depth);
    get("moving_fraction", s.moving_fraction);
    get("max_displacement", s.max_displacement);
    get("max_overlap", s.max_overlap);
    get("max_retries", s.max_retries);
    get("noise", s.noise);
    get("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid scene spec: ") + e.what());
  }
  return s;
}

ShapeKind shape_for_class(std::size_t class_id) {
  switch ((class_id - 1) % 3) {
    case 0: return ShapeKind::rectangle;
    case 1: return ShapeKind::disk;
    default: return ShapeKind::triangle;
  }
}

bool SceneObject::covers(double y, double x, int sy, int sx) const {
  const double py = y + 0.5 - (cy + sy);
  const double px = x + 0.5 - (cx + sx);
  switch (shape_for_class(static_cast<std::size_t>(class_id))) {
    case ShapeKind::rectangle: return std::abs(py) <= half_h && std::abs(px) <= half_w;
    case ShapeKind::disk: return py * py + px * px <= half_w * half_w;
    case ShapeKind::triangle: {
      if (std::abs(py) > half_h) return false;
      const double t = (py + half_h) / (2.0 * half_h);  // 0 at the apex row
      return std::abs(px) <= half_w * t;
    }
  }
  return false;
}

bool FramePairSample::operator==(const FramePairSample& o) const {
  auto same = [](const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::equal(a.values().begin(), a.values().end(), b.values().begin());
  };
  return same(frame_prev, o.frame_prev) && same(frame_curr, o.frame_curr) && seg == o.seg && depth == o.depth &&
         motion == o.motion;
}

namespace {

std::array<double, 3> class_color(std::int32_t class_id) {
  // Hues spaced by the golden ratio, fully saturated.
  const double hue = std::fmod(0.61803398874989485 * (class_id - 1) + 0.05, 1.0) * 6.0;
  const double f = hue - std::floor(hue);
  const int sector = static_cast<int>(std::floor(hue)) % 6;
  switch (sector) {
    case 0: return {1.0, f, 0.0};
    case 1: return {1.0 - f, 1.0, 0.0};
    case 2: return {0.0, 1.0, f};
    case 3: return {0.0, 1.0 - f, 1.0};
    case 4: return {f, 0.0, 1.0};
    default: return {1.0, 0.0, 1.0 - f};
  }
}

constexpr double kBackgroundGray = 0.3;

// Nearer objects are brighter: 1.0 at depth_min down to 0.35 at depth_max.
double brightness(const SceneSpec& spec, double depth) {
  const double span = spec.depth_max - spec.depth_min;
  const double t = span > 0.0 ? (depth - spec.depth_min) / span : 0.0;
  return 1.0 - 0.65 * std::clamp(t, 0.0, 1.0);
}

struct Box {
  double y0, x0, y1, x1;
};

Box bounds(const SceneObject& o, int sy, int sx) {
  return {o.cy + sy - o.half_h, o.cx + sx - o.half_w, o.cy + sy + o.half_h, o.cx + sx + o.half_w};
}

double iou(const Box& a, const Box& b) {
  const double ih = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const double iw = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const double inter = ih * iw;
  const double uni = (a.y1 - a.y0) * (a.x1 - a.x0) + (b.y1 - b.y0) * (b.x1 - b.x0) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace

FramePairSample render_scene(const SceneSpec& spec, std::span<const SceneObject> objects, std::uint64_t noise_seed) {
  const std::size_t h = spec.height, w = spec.width, plane = h * w;
  for (const auto& o : objects) {
    if (o.class_id < 1 || static_cast<std::size_t>(o.class_id) >= spec.num_classes) {
      throw ConfigError("object class " + std::to_string(o.class_id) + " outside [1," +
                        std::to_string(spec.num_classes) + ")");
    }
  }
  rng::Engine noise(noise_seed);
  FramePairSample s;
  s.seg = ClassMap(1, h, w, 0);
  s.depth = DepthMap(1, h, w, spec.background_depth);
  s.motion = ClassMap(1, h, w, 0);

  auto render = [&](bool previous) {
    std::vector<double> img(3 * plane);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        std::ptrdiff_t owner = -1;
        for (std::size_t i = 0; i < objects.size(); ++i) {
          const auto& o = objects[i];
          const bool hit = previous ? o.covers(double(y), double(x), -o.dy, -o.dx) : o.covers(double(y), double(x));
          if (hit && (owner < 0 || o.depth < objects[static_cast<std::size_t>(owner)].depth)) {
            owner = static_cast<std::ptrdiff_t>(i);
          }
        }
        std::array<double, 3> rgb{kBackgroundGray, kBackgroundGray, kBackgroundGray};
        if (owner >= 0) {
          const auto& o = objects[static_cast<std::size_t>(owner)];
          rgb = class_color(o.class_id);
          const double b = brightness(spec, o.depth);
          for (double& c : rgb) c *= b;
          if (!previous) {
            s.seg.at(0, y, x) = o.class_id;
            s.depth.at(0, y, x) = o.depth;
            s.motion.at(0, y, x) = o.moving() ? 1 : 0;
          }
        }
        for (std::size_t c = 0; c < 3; ++c) {
          const double v = rgb[c] + spec.noise * rng::normal(noise);
          img[c * plane + y * w + x] = std::clamp(v, 0.0, 1.0);
        }
      }
    }
    return Tensor({3, h, w}, std::move(img));
  };
  s.frame_prev = render(true);
  s.frame_curr = render(false);
  return s;
}

std::vector<SceneObject> sample_objects(const SceneSpec& spec, std::size_t index) {
  rng::Engine eng(rng::mix(spec.seed, 2 * index));
  const auto count = static_cast<std::size_t>(
      rng::uniform_int(eng, static_cast<std::int64_t>(spec.min_objects), static_cast<std::int64_t>(spec.max_objects)));
  std::vector<SceneObject> objects;
  for (std::size_t k = 0; k < count; ++k) {
    bool placed = false;
    for (std::size_t attempt = 0; attempt < spec.max_retries && !placed; ++attempt) {
      SceneObject o;
      o.class_id = static_cast<std::int32_t>(rng::uniform_int(eng, 1, static_cast<std::int64_t>(spec.num_classes) - 1));
      o.half_h = rng::uniform(eng, double(spec.min_size), double(spec.max_size));
      o.half_w = shape_for_class(static_cast<std::size_t>(o.class_id)) == ShapeKind::disk
                     ? o.half_h
                     : rng::uniform(eng, double(spec.min_size), double(spec.max_size));
      o.depth = rng::uniform(eng, spec.depth_min, spec.depth_max);
      if (rng::uniform01(eng) < spec.moving_fraction) {
        while (o.dy == 0 && o.dx == 0) {
          o.dy = static_cast<int>(rng::uniform_int(eng, -spec.max_displacement, spec.max_displacement));
          o.dx = static_cast<int>(rng::uniform_int(eng, -spec.max_displacement, spec.max_displacement));
        }
      }
      // Both positions must lie inside the frame.
      const double y_lo = o.half_h + std::max(0, o.dy), y_hi = double(spec.height) - o.half_h + std::min(0, o.dy);
      const double x_lo = o.half_w + std::max(0, o.dx), x_hi = double(spec.width) - o.half_w + std::min(0, o.dx);
      if (y_lo > y_hi || x_lo > x_hi) continue;
      o.cy = rng::uniform(eng, y_lo, y_hi);
      o.cx = rng::uniform(eng, x_lo, x_hi);
      const Box mine = bounds(o, 0, 0);
      placed = std::all_of(objects.begin(), objects.end(),
                           [&](const SceneObject& other) { return iou(mine, bounds(other, 0, 0)) <= spec.max_overlap; });
      if (placed) objects.push_back(o);
    }
    if (!placed) {
      throw DataError("could not place object " + std::to_string(k + 1) + " of sample " + std::to_string(index) +
                      " after " + std::to_string(spec.max_retries) + " attempts (overcrowded scene spec)");
    }
  }
  return objects;
}

std::vector<FramePairSample> generate_dataset(const SceneSpec& spec, std::size_t count) {
  spec.validate();
  if (count == 0) throw ConfigError("dataset count must be at least 1");
  std::vector<FramePairSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto objects = sample_objects(spec, i);
    out.push_back(render_scene(spec, objects, rng::mix(spec.seed, 2 * i + 1)));
  }
  return out;
}

Dataset make_dataset(const SceneSpec& spec, std::size_t count) {
  Dataset d;
  d.height = spec.height;
  d.width = spec.width;
  d.num_classes = spec.num_classes;
  d.spec = scene_spec_to_json(spec);
  d.samples = generate_dataset(spec, count);
  return d;
}

namespace {

struct FieldLayout {
  const char* name;
  const char* dtype;
  std::size_t element_size;
  std::size_t channels;  // 3 for images, 1 for label maps
};

constexpr std::array<FieldLayout, 5> kFields{{
    {"frame_prev", "f64", 8, 3},
    {"frame_curr", "f64", 8, 3},
    {"seg", "i32", 4, 1},
    {"depth", "f64", 8, 1},
    {"motion", "u8", 1, 1},
}};

std::size_t sample_bytes(std::size_t h, std::size_t w) {
  std::size_t total = 0;
  for (const auto& f : kFields) total += f.element_size * f.channels * h * w;
  return total;
}

std::string sample_file(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "samples/%06zu.bin", i);
  return buf;
}

}  // namespace

void write_dataset(const Dataset& dataset, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "samples", ec);
  if (ec) throw DataError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  const std::size_t h = dataset.height, w = dataset.width;

  nlohmann::json layout = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& f : kFields) {
    const Shape shape = f.channels == 3 ? Shape{3, h, w} : Shape{h, w};
    layout.push_back({{"field", f.name}, {"dtype", f.dtype}, {"shape", shape}, {"offset", offset}});
    offset += f.element_size * f.channels * h * w;
  }
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) files.push_back(sample_file(i));
  const nlohmann::json index{{"format", "mtl-synthetic"},
                             {"version", 1},
                             {"endianness", "little"},
                             {"shape_order", "row-major, channel-height-width"},
                             {"count", dataset.samples.size()},
                             {"height", h},
                             {"width", w},
                             {"num_classes", dataset.num_classes},
                             {"sample_bytes", sample_bytes(h, w)},
                             {"layout", layout},
                             {"spec", dataset.spec},
                             {"samples", files}};

  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& s = dataset.samples[i];
    if (s.seg.h != h || s.seg.w != w) throw ShapeError("write_dataset: sample " + std::to_string(i) + " has wrong size");
    std::ofstream os(dir / sample_file(i), std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write " + (dir / sample_file(i)).string());
    binary_io::write_values<double>(os, s.frame_prev.values());
    binary_io::write_values<double>(os, s.frame_curr.values());
    binary_io::write_values<std::int32_t>(os, s.seg.data);
    binary_io::write_values<double>(os, s.depth.data);
    std::vector<std::uint8_t> motion(s.motion.data.begin(), s.motion.data.end());
    binary_io::write_values<std::uint8_t>(os, motion);
    if (!os) throw DataError("failed writing " + (dir / sample_file(i)).string());
  }
  std::ofstream os(dir / "index.json", std::ios::trunc);
  if (!os) throw DataError("cannot write " + (dir / "index.json").string());
  os << index.dump(2) << '\n';
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path index_path = dir / "index.json";
  if (!fs::exists(index_path)) throw DataError("no index: " + index_path.string() + " not found");
  nlohmann::json index;
  try {
    std::ifstream is(index_path);
    index = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed index " + index_path.string() + ": " + e.what());
  }
  Dataset d;
  std::vector<std::string> files;
  try {
    if (index.at("format").get<std::string>() != "mtl-synthetic") throw DataError("unknown dataset format");
    if (index.at("endianness").get<std::string>() != "little") throw DataError("unsupported endianness");
    d.height = index.at("height").get<std::size_t>();
    d.width = index.at("width").get<std::size_t>();
    d.num_classes = index.at("num_classes").get<std::size_t>();
    d.spec = index.value("spec", nlohmann::json::object());
    files = index.at("samples").get<std::vector<std::string>>();
    if (files.size() != index.at("count").get<std::size_t>()) throw DataError("index count does not match sample list");
    if (index.at("sample_bytes").get<std::size_t>() != sample_bytes(d.height, d.width)) {
      throw DataError("index sample_bytes does not match its height/width");
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed index " + index_path.string() + ": " + e.what());
  }
  const std::size_t h = d.height, w = d.width, plane = h * w;
  const std::size_t expected = sample_bytes(h, w);
  for (const auto& name : files) {
    const fs::path path = dir / name;
    if (!fs::exists(path)) throw DataError("missing sample payload: " + path.string());
    if (fs::file_size(path) != expected) {
      throw DataError("sample payload " + path.string() + " has " + std::to_string(fs::file_size(path)) +
                      " bytes, index implies " + std::to_string(expected));
    }
    std::ifstream is(path, std::ios::binary);
    FramePairSample s;
    std::vector<double> prev(3 * plane), curr(3 * plane);
    s.seg = ClassMap(1, h, w);
    s.depth = DepthMap(1, h, w);
    s.motion = ClassMap(1, h, w);
    std::vector<std::uint8_t> motion(plane);
    bool ok = binary_io::read_values<double>(is, prev) && binary_io::read_values<double>(is, curr) &&
              binary_io::read_values<std::int32_t>(is, s.seg.data) && binary_io::read_values<double>(is, s.depth.data) &&
              binary_io::read_values<std::uint8_t>(is, motion);
    if (!ok) throw DataError("truncated sample payload: " + path.string());
    for (std::size_t i = 0; i < plane; ++i) {
      if (s.seg.data[i] < 0 || static_cast<std::size_t>(s.seg.data[i]) >= d.num_classes) {
        throw DataError("segmentation id out of range in " + path.string());
      }
      if (motion[i] > 1) throw DataError("motion label not in {0,1} in " + path.string());
      if (!std::isfinite(s.depth.data[i]) || s.depth.data[i] < 0.0) throw DataError("invalid depth in " + path.string());
      s.motion.data[i] = motion[i];
    }
    s.frame_prev = Tensor({3, h, w}, std::move(prev));
    s.frame_curr = Tensor({3, h, w}, std::move(curr));
    d.samples.push_back(std::move(s));
  }
  return d;
}

std::pair<std::vector<FramePairSample>, std::vector<FramePairSample>> split(std::span<const FramePairSample> samples,
                                                                            double train_fraction,
                                                                            std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must be in (0, 1)");
  const std::size_t n = samples.size();
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  if (n_train == 0 || n_train >= n) {
    throw ConfigError("degenerate split: " + std::to_string(n) + " samples at fraction " + std::to_string(train_fraction));
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng::Engine eng(rng::mix(seed, rng::fnv1a("split")));
  for (std::size_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(rng::uniform_int(eng, 0, static_cast<std::int64_t>(i)));
    std::swap(order[i], order[j]);
  }
  std::pair<std::vector<FramePairSample>, std::vector<FramePairSample>> out;
  for (std::size_t i = 0; i < n; ++i) (i < n_train ? out.first : out.second).push_back(samples[order[i]]);
  return out;
}

Batch collate(std::span<const FramePairSample> samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ConfigError("collate: empty batch");
  const auto& first = samples[indices[0]];
  const std::size_t h = first.seg.h, w = first.seg.w, plane = h * w, n = indices.size();
  std::vector<double> prev, curr;
  prev.reserve(n * 3 * plane);
  curr.reserve(n * 3 * plane);
  Batch b;
  b.seg = ClassMap(n, h, w);
  b.depth = DepthMap(n, h, w);
  b.motion = ClassMap(n, h, w);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& s = samples[indices[k]];
    if (s.seg.h != h || s.seg.w != w) throw ShapeError("collate: samples differ in resolution");
    prev.insert(prev.end(), s.frame_prev.values().begin(), s.frame_prev.values().end());
    curr.insert(curr.end(), s.frame_curr.values().begin(), s.frame_curr.values().end());
    std::copy(s.seg.data.begin(), s.seg.data.end(), b.seg.data.begin() + static_cast<std::ptrdiff_t>(k * plane));
    std::copy(s.depth.data.begin(), s.depth.data.end(), b.depth.data.begin() + static_cast<std::ptrdiff_t>(k * plane));
    std::copy(s.motion.data.begin(), s.motion.data.end(), b.motion.data.begin() + static_cast<std::ptrdiff_t>(k * plane));
  }
  b.frame_prev = Tensor({n, 3, h, w}, std::move(prev));
  b.frame_curr = Tensor({n, 3, h, w}, std::move(curr));
  return b;
}

std::size_t count_motion_pixels(std::span<const FramePairSample> samples) {
  std::size_t total = 0;
  for (const auto& s : samples) {
    for (auto v : s.motion.data) total += v != 0 ? 1 : 0;
  }
  return total;
}

}  // namespace mtl
