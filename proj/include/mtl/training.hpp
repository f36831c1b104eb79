#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mtl/combiners.hpp"
#include "mtl/losses.hpp"
#include "mtl/network.hpp"
#include "mtl/synthetic_data.hpp"

namespace mtl {

struct OptimizerConfig {
  std::string kind = "adam";  // adam | sgd
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct ExperimentConfig {
  std::vector<Task> tasks{Task::segmentation, Task::depth, Task::motion};
  std::size_t num_frames = 2;
  Aggregation aggregation = Aggregation::concat;
  EncoderConfig encoder;
  std::size_t decoder_width = 16;
  CombinerConfig combiner;
  OptimizerConfig optimizer;
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  std::uint64_t seed = 42;
  std::string dataset_path;
  std::string output_path;
  double huber_delta = 250.0;
  double regression_rel_tol = 0.1;
  double regression_abs_floor = 1e-3;
  double train_fraction = 0.8;

  void validate() const;
  ModelConfig model_config(std::size_t num_classes) const;
};

nlohmann::json experiment_config_to_json(const ExperimentConfig& config);
// Missing keys keep the values from `defaults`.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j, ExperimentConfig defaults = {});

struct TaskEpochMetrics {
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;  // pixel accuracy, or regression accuracy for depth
  double weight = 0.0;        // mean d(total)/d(L_task) over the epoch
};

struct MetricsRecord {
  std::size_t epoch = 0;  // 1-based
  std::map<Task, TaskEpochMetrics> tasks;
  double combined_loss = 0.0;  // epoch mean of the training objective
  double wall_seconds = 0.0;
};

struct EvalMetrics {
  std::map<Task, double> loss;
  std::map<Task, double> accuracy;
};

// Produces head outputs for a batch; evaluate() accepts any predictor so
// the metric plumbing can be checked against a perfect oracle.
using Predictor = std::function<ForwardResult(const Batch&)>;

Predictor model_predictor(const MultiStreamModel& model);

// Model inputs for a batch: {curr} for one frame, {prev, curr} for two.
std::vector<Tensor> model_inputs(const Batch& batch, std::size_t num_frames);

// Per-task losses in the configured task order.
TaskLossVector task_losses(const ForwardResult& out, const Batch& batch, std::span<const Task> tasks,
                           double huber_delta);

EvalMetrics evaluate(const Predictor& predictor, std::span<const FramePairSample> split,
                     const ExperimentConfig& config);
EvalMetrics evaluate(const MultiStreamModel& model, std::span<const FramePairSample> split,
                     const ExperimentConfig& config);

struct TrainResult {
  MultiStreamModel model;
  std::vector<MetricsRecord> history;
  LossCombiner combiner;
};

using EpochCallback = std::function<void(const MetricsRecord&)>;

TrainResult train(const ExperimentConfig& config, std::span<const FramePairSample> train_split,
                  std::span<const FramePairSample> val_split, std::size_t num_classes,
                  const EpochCallback& on_epoch = {});
// Splits `dataset` with config.train_fraction and config.seed.
TrainResult train(const ExperimentConfig& config, const Dataset& dataset, const EpochCallback& on_epoch = {});

// CSV with a header row; one row per epoch. Wall-clock time is left out so
// reruns are byte-identical.
void write_metrics_csv(std::ostream& os, std::span<const Task> tasks, std::span<const MetricsRecord> history);

}  // namespace mtl
