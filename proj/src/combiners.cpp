#include "mtl/combiners.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mtl/error.hpp"
#include "mtl/ops.hpp"

namespace mtl {

CombinerState CombinerState::for_tasks(std::size_t n, double initial_log_variance, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("DWA temperature must be positive");
  CombinerState state;
  state.dwa_temperature = temperature;
  state.log_variances.reserve(n);
  for (std::size_t i = 0; i < n; ++i) state.log_variances.push_back(Tensor::scalar(initial_log_variance, true));
  return state;
}

namespace combiners {

namespace {

void require_nonempty(const TaskLossVector& losses, const char* who) {
  if (losses.empty()) throw ConfigError(std::string(who) + ": no task losses");
  for (const auto& tl : losses) {
    if (!tl.loss.defined() || tl.loss.numel() != 1) {
      throw ShapeError(std::string(who) + ": loss for task '" + tl.task + "' is not a scalar");
    }
  }
}

Tensor sum_terms(const std::vector<Tensor>& terms) { return ops::add(std::span<const Tensor>(terms)); }

Tensor geometric_mean(const TaskLossVector& floored, std::size_t count) {
  std::vector<Tensor> logs;
  logs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) logs.push_back(ops::log(floored[i].loss));
  return ops::exp(ops::scale(sum_terms(logs), 1.0 / static_cast<double>(count)));
}

}  // namespace

TaskLossVector floor_losses(const TaskLossVector& losses, double floor) {
  if (!(floor > 0.0)) throw ConfigError("loss floor must be positive");
  require_nonempty(losses, "floor_losses");
  TaskLossVector out;
  out.reserve(losses.size());
  for (const auto& tl : losses) {
    const double v = tl.loss.item();
    if (!std::isfinite(v)) throw NumericError("loss for task '" + tl.task + "' is not finite");
    if (v < 0.0) throw NumericError("loss for task '" + tl.task + "' is negative: " + std::to_string(v));
    out.push_back({tl.task, ops::clamp_min(tl.loss, floor)});
  }
  return out;
}

Tensor combine_gls(const TaskLossVector& losses, double floor) {
  const TaskLossVector floored = floor_losses(losses, floor);
  return geometric_mean(floored, floored.size());
}

Tensor combine_fls(const TaskLossVector& losses, std::size_t m, double floor) {
  if (m < 1 || m > losses.size()) {
    throw ConfigError("combine_fls: focus count m=" + std::to_string(m) + " outside [1," +
                      std::to_string(losses.size()) + "]");
  }
  const TaskLossVector floored = floor_losses(losses, floor);
  return ops::mul(geometric_mean(floored, floored.size()), geometric_mean(floored, m));
}

Tensor combine_equal(const TaskLossVector& losses) {
  require_nonempty(losses, "combine_equal");
  std::vector<Tensor> terms;
  for (const auto& tl : losses) terms.push_back(tl.loss);
  return sum_terms(terms);
}

Tensor combine_weighted(const TaskLossVector& losses, const std::vector<double>& weights) {
  require_nonempty(losses, "combine_weighted");
  if (weights.size() != losses.size()) {
    throw ConfigError("combine_weighted: " + std::to_string(weights.size()) + " weights for " +
                      std::to_string(losses.size()) + " tasks");
  }
  std::vector<Tensor> terms;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (!(weights[i] > 0.0)) throw ConfigError("combine_weighted: weights must be positive");
    terms.push_back(ops::scale(losses[i].loss, weights[i]));
  }
  return sum_terms(terms);
}

Tensor combine_uncertainty(const TaskLossVector& losses, const CombinerState& state) {
  require_nonempty(losses, "combine_uncertainty");
  if (state.log_variances.size() != losses.size()) {
    throw ConfigError("combine_uncertainty: state has " + std::to_string(state.log_variances.size()) +
                      " log-variances for " + std::to_string(losses.size()) + " tasks");
  }
  std::vector<Tensor> terms;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    const Tensor& s = state.log_variances[i];
    const Tensor precision = ops::exp(ops::scale(s, -1.0));
    terms.push_back(ops::scale(ops::mul(precision, losses[i].loss), 0.5));
    terms.push_back(ops::scale(s, 0.5));
  }
  return sum_terms(terms);
}

std::vector<double> dwa_weights(const CombinerState& state, std::size_t n) {
  if (state.dwa_history.size() < 2) return std::vector<double>(n, 1.0);
  const auto& prev = state.dwa_history[state.dwa_history.size() - 2];
  const auto& last = state.dwa_history.back();
  if (prev.size() != n || last.size() != n) {
    throw ConfigError("combine_dwa: history holds " + std::to_string(last.size()) + " tasks, expected " +
                      std::to_string(n));
  }
  std::vector<double> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = (last[i] / prev[i]) / state.dwa_temperature;
  const double mx = *std::max_element(z.begin(), z.end());
  double denom = 0.0;
  for (double& v : z) {
    v = std::exp(v - mx);
    denom += v;
  }
  for (double& v : z) v = static_cast<double>(n) * v / denom;
  return z;
}

Tensor combine_dwa(const TaskLossVector& losses, const CombinerState& state) {
  require_nonempty(losses, "combine_dwa");
  const std::vector<double> w = dwa_weights(state, losses.size());
  std::vector<Tensor> terms;
  for (std::size_t i = 0; i < losses.size(); ++i) terms.push_back(ops::scale(losses[i].loss, w[i]));
  return sum_terms(terms);
}

CombinerState update_state(const CombinerState& state, const std::vector<double>& epoch_mean_losses) {
  if (!state.dwa_history.empty() && state.dwa_history.back().size() != epoch_mean_losses.size()) {
    throw ConfigError("update_state: got " + std::to_string(epoch_mean_losses.size()) + " losses, history has " +
                      std::to_string(state.dwa_history.back().size()) + " tasks");
  }
  if (!state.log_variances.empty() && state.log_variances.size() != epoch_mean_losses.size()) {
    throw ConfigError("update_state: got " + std::to_string(epoch_mean_losses.size()) + " losses for " +
                      std::to_string(state.log_variances.size()) + " tasks");
  }
  CombinerState next = state;
  next.dwa_history.push_back(epoch_mean_losses);
  while (next.dwa_history.size() > 2) next.dwa_history.pop_front();
  ++next.epoch_counter;
  return next;
}

}  // namespace combiners

namespace {

const std::vector<std::pair<CombinerKind, std::string>>& kind_table() {
  static const std::vector<std::pair<CombinerKind, std::string>> table{
      {CombinerKind::equal, "equal"}, {CombinerKind::weighted, "weighted"},       {CombinerKind::gls, "gls"},
      {CombinerKind::fls, "fls"},     {CombinerKind::uncertainty, "uncertainty"}, {CombinerKind::dwa, "dwa"},
  };
  return table;
}

}  // namespace

std::string_view combiner_name(CombinerKind kind) {
  for (const auto& [k, name] : kind_table()) {
    if (k == kind) return name;
  }
  return "unknown";
}

const std::vector<std::string>& combiner_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& entry : kind_table()) out.push_back(entry.second);
    return out;
  }();
  return names;
}

CombinerKind parse_combiner(std::string_view name) {
  for (const auto& [k, n] : kind_table()) {
    if (n == name) return k;
  }
  std::string valid;
  for (const auto& n : combiner_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw ConfigError("unknown combiner '" + std::string(name) + "'; valid names: " + valid);
}

LossCombiner::LossCombiner(CombinerConfig config, std::size_t num_tasks)
    : config_(std::move(config)),
      num_tasks_(num_tasks),
      state_(CombinerState::for_tasks(num_tasks, config_.initial_log_variance, config_.temperature)) {
  if (num_tasks_ == 0) throw ConfigError("combiner needs at least one task");
  if (!(config_.epsilon > 0.0)) throw ConfigError("combiner epsilon must be positive");
  if (config_.kind == CombinerKind::fls && (config_.focus_m < 1 || config_.focus_m > num_tasks_)) {
    throw ConfigError("fls focus m=" + std::to_string(config_.focus_m) + " outside [1," + std::to_string(num_tasks_) +
                      "]");
  }
  if (config_.kind == CombinerKind::weighted) {
    if (config_.weights.size() != num_tasks_) {
      throw ConfigError("weighted combiner needs " + std::to_string(num_tasks_) + " weights, got " +
                        std::to_string(config_.weights.size()));
    }
    for (double w : config_.weights) {
      if (!(w > 0.0)) throw ConfigError("weighted combiner weights must be positive");
    }
  }
}

Tensor LossCombiner::combine(const TaskLossVector& losses) const {
  switch (config_.kind) {
    case CombinerKind::equal: return combiners::combine_equal(losses);
    case CombinerKind::weighted: return combiners::combine_weighted(losses, config_.weights);
    case CombinerKind::gls: return combiners::combine_gls(losses, config_.epsilon);
    case CombinerKind::fls: return combiners::combine_fls(losses, config_.focus_m, config_.epsilon);
    case CombinerKind::uncertainty: return combiners::combine_uncertainty(losses, state_);
    case CombinerKind::dwa: return combiners::combine_dwa(losses, state_);
  }
  throw ConfigError("unhandled combiner kind");
}

std::vector<double> LossCombiner::task_weights(const std::vector<double>& loss_values) const {
  const std::size_t n = loss_values.size();
  if (n != num_tasks_) throw ConfigError("task_weights: wrong number of losses");
  std::vector<double> w(n, 1.0);
  auto geo = [&](std::size_t count) {
    double s = 0.0;
    for (std::size_t i = 0; i < count; ++i) s += std::log(std::max(loss_values[i], config_.epsilon));
    return std::exp(s / static_cast<double>(count));
  };
  switch (config_.kind) {
    case CombinerKind::equal: break;
    case CombinerKind::weighted: w = config_.weights; break;
    case CombinerKind::gls: {
      const double total = geo(n);
      for (std::size_t i = 0; i < n; ++i) {
        w[i] = loss_values[i] > config_.epsilon ? total / (static_cast<double>(n) * loss_values[i]) : 0.0;
      }
      break;
    }
    case CombinerKind::fls: {
      const std::size_t m = config_.focus_m;
      const double total = geo(n) * geo(m);
      for (std::size_t i = 0; i < n; ++i) {
        if (!(loss_values[i] > config_.epsilon)) {
          w[i] = 0.0;
          continue;
        }
        w[i] = total / (static_cast<double>(n) * loss_values[i]);
        if (i < m) w[i] += total / (static_cast<double>(m) * loss_values[i]);
      }
      break;
    }
    case CombinerKind::uncertainty:
      for (std::size_t i = 0; i < n; ++i) w[i] = 0.5 * std::exp(-state_.log_variances[i].item());
      break;
    case CombinerKind::dwa: w = combiners::dwa_weights(state_, n); break;
  }
  return w;
}

void LossCombiner::end_epoch(const std::vector<double>& epoch_mean_losses) {
  if (epoch_mean_losses.size() != num_tasks_) throw ConfigError("end_epoch: wrong number of losses");
  state_ = combiners::update_state(state_, epoch_mean_losses);
}

std::vector<Tensor> LossCombiner::trainable() const {
  if (config_.kind == CombinerKind::uncertainty) return state_.log_variances;
  return {};
}

}  // namespace mtl
