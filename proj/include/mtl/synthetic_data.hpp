#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mtl/losses.hpp"
#include "mtl/tensor.hpp"

namespace mtl {

struct SceneSpec {
  std::size_t height = 64;
  std::size_t width = 96;
  std::size_t num_classes = 4;  // background + shape classes
  std::size_t min_objects = 2;
  std::size_t max_objects = 4;
  std::size_t min_size = 6;   // half-extent / radius, pixels
  std::size_t max_size = 14;
  double depth_min = 5.0;
  double depth_max = 50.0;
  double background_depth = 80.0;
  double moving_fraction = 0.5;
  int max_displacement = 4;
  double max_overlap = 0.35;  // bounding-box IoU allowed between objects
  std::size_t max_retries = 200;
  double noise = 0.02;
  std::uint64_t seed = 7;

  void validate() const;
};

nlohmann::json scene_spec_to_json(const SceneSpec& spec);
SceneSpec scene_spec_from_json(const nlohmann::json& j, SceneSpec defaults = {});

enum class ShapeKind { rectangle, disk, triangle };

// Shape of segmentation class `class_id` (>= 1).
ShapeKind shape_for_class(std::size_t class_id);

struct SceneObject {
  std::int32_t class_id = 1;
  double cy = 0.0;  // centre in frame_curr
  double cx = 0.0;
  double half_h = 5.0;
  double half_w = 5.0;  // radius for disks
  double depth = 10.0;
  int dy = 0;  // displacement from frame_prev to frame_curr
  int dx = 0;

  bool moving() const { return dy != 0 || dx != 0; }
  // Whether pixel centre (y + 0.5, x + 0.5) is covered, shifted by (-sy, -sx).
  bool covers(double y, double x, int sy = 0, int sx = 0) const;
};

struct FramePairSample {
  Tensor frame_prev;  // [3,H,W]
  Tensor frame_curr;  // [3,H,W]
  ClassMap seg;       // [1,H,W]
  DepthMap depth;     // [1,H,W]
  ClassMap motion;    // [1,H,W], values {0,1}

  bool operator==(const FramePairSample& other) const;
};

// Renders frames and labels for an explicit object list. The nearest
// covering object owns a pixel; ties go to the lower index.
FramePairSample render_scene(const SceneSpec& spec, std::span<const SceneObject> objects, std::uint64_t noise_seed);

// Samples the object list for sample `index`.
std::vector<SceneObject> sample_objects(const SceneSpec& spec, std::size_t index);

std::vector<FramePairSample> generate_dataset(const SceneSpec& spec, std::size_t count);

struct Dataset {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t num_classes = 0;
  nlohmann::json spec = nlohmann::json::object();  // echo of the generating SceneSpec
  std::vector<FramePairSample> samples;
};

Dataset make_dataset(const SceneSpec& spec, std::size_t count);

// Layout: <dir>/index.json plus <dir>/samples/NNNNNN.bin, one per sample.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

// Deterministic shuffle then cut; both sides must be non-empty.
std::pair<std::vector<FramePairSample>, std::vector<FramePairSample>> split(std::span<const FramePairSample> samples,
                                                                            double train_fraction,
                                                                            std::uint64_t seed);

struct Batch {
  Tensor frame_prev;  // [N,3,H,W]
  Tensor frame_curr;
  ClassMap seg;
  DepthMap depth;
  ClassMap motion;

  std::size_t size() const { return seg.n; }
};

Batch collate(std::span<const FramePairSample> samples, std::span<const std::size_t> indices);

std::size_t count_motion_pixels(std::span<const FramePairSample> samples);

}  // namespace mtl
