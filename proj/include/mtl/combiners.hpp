#pragma once

#include <cstddef>
#include <deque>
#include <string>
#include <string_view>
#include <vector>

#include "mtl/tensor.hpp"

namespace mtl {

struct TaskLoss {
  std::string task;
  Tensor loss;  // scalar
};

// Ordered per-task losses. For the focused strategy the order is the
// priority order: the first m entries are the focused tasks.
using TaskLossVector = std::vector<TaskLoss>;

inline constexpr double kDefaultLossFloor = 1e-12;

// Persistent strategy state owned by one training run.
struct CombinerState {
  // Most recent epoch last; at most two entries, each one value per task.
  std::deque<std::vector<double>> dwa_history;
  double dwa_temperature = 2.0;
  // Learnable log-variances s_i, one scalar leaf per task.
  std::vector<Tensor> log_variances;
  std::size_t epoch_counter = 0;

  static CombinerState for_tasks(std::size_t n, double initial_log_variance = 0.0, double temperature = 2.0);
};

namespace combiners {

// Floors every loss to `floor` after checking it is finite and not negative.
TaskLossVector floor_losses(const TaskLossVector& losses, double floor = kDefaultLossFloor);

// Geometric mean exp(mean(log L_i)).
Tensor combine_gls(const TaskLossVector& losses, double floor = kDefaultLossFloor);

// Geometric mean of all n losses times the geometric mean of the first m.
Tensor combine_fls(const TaskLossVector& losses, std::size_t m, double floor = kDefaultLossFloor);

Tensor combine_equal(const TaskLossVector& losses);
Tensor combine_weighted(const TaskLossVector& losses, const std::vector<double>& weights);

// sum_i 0.5 exp(-s_i) L_i + 0.5 s_i
Tensor combine_uncertainty(const TaskLossVector& losses, const CombinerState& state);

// sum_i w_i L_i with w = n softmax(r / T), r_i = L_i(t-1) / L_i(t-2);
// all ones until two epochs of history exist.
Tensor combine_dwa(const TaskLossVector& losses, const CombinerState& state);
std::vector<double> dwa_weights(const CombinerState& state, std::size_t n);

// Pushes one epoch of per-task mean losses and advances the epoch counter.
CombinerState update_state(const CombinerState& state, const std::vector<double>& epoch_mean_losses);

}  // namespace combiners

enum class CombinerKind { equal, weighted, gls, fls, uncertainty, dwa };

std::string_view combiner_name(CombinerKind kind);
// Throws ConfigError listing the valid names.
CombinerKind parse_combiner(std::string_view name);
const std::vector<std::string>& combiner_names();

struct CombinerConfig {
  CombinerKind kind = CombinerKind::gls;
  std::size_t focus_m = 1;
  double temperature = 2.0;
  double epsilon = kDefaultLossFloor;
  double initial_log_variance = 0.0;
  std::vector<double> weights;  // weighted only
};

// A configured strategy plus its state, as used by the training loop.
class LossCombiner {
 public:
  LossCombiner(CombinerConfig config, std::size_t num_tasks);

  Tensor combine(const TaskLossVector& losses) const;
  // d(total)/d(L_i) at the given loss values, evaluated analytically.
  std::vector<double> task_weights(const std::vector<double>& loss_values) const;
  // Called once per epoch with the epoch-mean training losses.
  void end_epoch(const std::vector<double>& epoch_mean_losses);

  // Extra parameters the optimizer must update (uncertainty log-variances).
  std::vector<Tensor> trainable() const;

  const CombinerConfig& config() const { return config_; }
  const CombinerState& state() const { return state_; }
  std::size_t num_tasks() const { return num_tasks_; }

 private:
  CombinerConfig config_;
  std::size_t num_tasks_;
  CombinerState state_;
};

}  // namespace mtl
