#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mtl/tensor.hpp"

namespace mtl {

enum class Task { segmentation, depth, motion };

std::string_view task_name(Task task);
Task parse_task(std::string_view name);

enum class Aggregation { concat, sum };

std::string_view aggregation_name(Aggregation mode);
Aggregation parse_aggregation(std::string_view name);

inline constexpr std::size_t kEncoderLevels = 3;

struct EncoderConfig {
  std::size_t base_channels = 8;
  std::size_t levels = kEncoderLevels;  // fixed; validated
  std::size_t kernel = 3;
};

struct ModelConfig {
  EncoderConfig encoder;
  std::vector<Task> tasks{Task::segmentation, Task::depth, Task::motion};
  std::size_t num_frames = 2;
  Aggregation aggregation = Aggregation::concat;
  std::size_t num_classes = 4;
  std::size_t decoder_width = 16;
  std::uint64_t seed = 42;
};

struct Parameter {
  std::string name;
  std::string component;  // "encoder" or the owning task's name
  Tensor value;
};

// Three feature levels at strides 2, 4 and 8.
using FeatureLevels = std::array<Tensor, kEncoderLevels>;

struct ForwardResult {
  // Logits for classification heads, depth values for the depth head.
  std::map<Task, Tensor> raw;
  // Softmax probabilities for classification heads, depth values for depth.
  std::map<Task, Tensor> predictions;
};

struct ParamCountReport {
  std::size_t encoder = 0;
  std::map<Task, std::size_t> decoders;
  std::size_t total = 0;
};

// Shared encoder applied to every frame, per-level aggregation across
// frames, and one upsampling decoder per task.
class MultiStreamModel {
 public:
  explicit MultiStreamModel(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  bool has_task(Task task) const;
  std::size_t output_channels(Task task) const;

  const std::vector<Parameter>& parameters() const { return params_; }
  std::vector<Parameter>& parameters() { return params_; }
  std::vector<Tensor> parameter_tensors() const;
  const Tensor& param(std::string_view name) const;

  // Channels per encoder level for one stream, and after aggregation.
  std::array<std::size_t, kEncoderLevels> stream_channels() const;
  std::array<std::size_t, kEncoderLevels> aggregated_channels() const;

  FeatureLevels encode(const Tensor& frame) const;
  FeatureLevels aggregate(std::span<const FeatureLevels> streams) const;
  Tensor decode(Task task, const FeatureLevels& aggregated) const;
  ForwardResult forward(std::span<const Tensor> frames) const;

 private:
  std::size_t index_of(std::string_view name) const;

  ModelConfig config_;
  std::vector<Parameter> params_;
};

MultiStreamModel build_model(const ModelConfig& config);
MultiStreamModel build_model(const EncoderConfig& encoder, std::vector<Task> tasks, std::size_t num_frames,
                             Aggregation aggregation, std::size_t num_classes, std::uint64_t seed);

ParamCountReport count_params(const MultiStreamModel& model);

}  // namespace mtl
