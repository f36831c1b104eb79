#include "mtl/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "mtl/error.hpp"
#include "mtl/ops.hpp"
#include "mtl/optim.hpp"
#include "mtl/rng.hpp"

namespace mtl {

void ExperimentConfig::validate() const {
  if (tasks.empty()) throw ConfigError("config: at least one task is required");
  if (num_frames != 1 && num_frames != 2) throw ConfigError("config: num_frames must be 1 or 2");
  if (epochs == 0) throw ConfigError("config: epochs must be positive");
  if (batch_size == 0) throw ConfigError("config: batch_size must be positive");
  if (decoder_width == 0 || encoder.base_channels == 0) throw ConfigError("config: channel widths must be positive");
  if (!(optimizer.lr > 0.0)) throw ConfigError("config: learning rate must be positive");
  if (optimizer.kind != "adam" && optimizer.kind != "sgd") {
    throw ConfigError("config: optimizer must be 'adam' or 'sgd', got '" + optimizer.kind + "'");
  }
  if (!(optimizer.beta1 > 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 > 0.0 && optimizer.beta2 < 1.0)) {
    throw ConfigError("config: Adam betas must be in (0, 1)");
  }
  if (!(optimizer.eps > 0.0)) throw ConfigError("config: optimizer eps must be positive");
  if (!(huber_delta > 0.0)) throw ConfigError("config: huber_delta must be positive");
  if (!(regression_rel_tol > 0.0) || !(regression_abs_floor > 0.0)) {
    throw ConfigError("config: regression tolerances must be positive");
  }
  if (!(combiner.temperature > 0.0) || !(combiner.epsilon > 0.0)) {
    throw ConfigError("config: combiner temperature and epsilon must be positive");
  }
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("config: train_fraction must be in (0, 1)");
}

ModelConfig ExperimentConfig::model_config(std::size_t num_classes) const {
  ModelConfig m;
  m.encoder = encoder;
  m.tasks = tasks;
  m.num_frames = num_frames;
  m.aggregation = aggregation;
  m.num_classes = num_classes;
  m.decoder_width = decoder_width;
  m.seed = seed;
  return m;
}

nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
  nlohmann::json tasks = nlohmann::json::array();
  for (Task t : c.tasks) tasks.push_back(std::string(task_name(t)));
  return {{"tasks", tasks},
          {"num_frames", c.num_frames},
          {"aggregation", std::string(aggregation_name(c.aggregation))},
          {"encoder", {{"base_channels", c.encoder.base_channels}, {"kernel", c.encoder.kernel}}},
          {"decoder_width", c.decoder_width},
          {"combiner",
           {{"name", std::string(combiner_name(c.combiner.kind))},
            {"m", c.combiner.focus_m},
            {"temperature", c.combiner.temperature},
            {"epsilon", c.combiner.epsilon},
            {"initial_log_variance", c.combiner.initial_log_variance},
            {"weights", c.combiner.weights}}},
          {"optimizer",
           {{"kind", c.optimizer.kind},
            {"lr", c.optimizer.lr},
            {"beta1", c.optimizer.beta1},
            {"beta2", c.optimizer.beta2},
            {"eps", c.optimizer.eps}}},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"dataset", c.dataset_path},
          {"output", c.output_path},
          {"huber_delta", c.huber_delta},
          {"regression_rel_tol", c.regression_rel_tol},
          {"regression_abs_floor", c.regression_abs_floor},
          {"train_fraction", c.train_fraction}};
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j, ExperimentConfig c) {
  try {
    if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
    auto get = [](const nlohmann::json& obj, const char* key, auto& field) {
      if (obj.contains(key)) field = obj.at(key).get<std::decay_t<decltype(field)>>();
    };
    if (j.contains("tasks")) {
      c.tasks.clear();
      for (const auto& t : j.at("tasks")) c.tasks.push_back(parse_task(t.get<std::string>()));
    }
    get(j, "num_frames", c.num_frames);
    if (j.contains("aggregation")) c.aggregation = parse_aggregation(j.at("aggregation").get<std::string>());
    if (j.contains("encoder")) {
      get(j.at("encoder"), "base_channels", c.encoder.base_channels);
      get(j.at("encoder"), "kernel", c.encoder.kernel);
    }
    get(j, "decoder_width", c.decoder_width);
    if (j.contains("combiner")) {
      const auto& cj = j.at("combiner");
      if (cj.is_string()) {
        c.combiner.kind = parse_combiner(cj.get<std::string>());
      } else {
        if (cj.contains("name")) c.combiner.kind = parse_combiner(cj.at("name").get<std::string>());
        get(cj, "m", c.combiner.focus_m);
        get(cj, "temperature", c.combiner.temperature);
        get(cj, "epsilon", c.combiner.epsilon);
        get(cj, "initial_log_variance", c.combiner.initial_log_variance);
        get(cj, "weights", c.combiner.weights);
      }
    }
    if (j.contains("optimizer")) {
      const auto& oj = j.at("optimizer");
      if (oj.is_string()) {
        c.optimizer.kind = oj.get<std::string>();
      } else {
        get(oj, "kind", c.optimizer.kind);
        get(oj, "lr", c.optimizer.lr);
        get(oj, "beta1", c.optimizer.beta1);
        get(oj, "beta2", c.optimizer.beta2);
        get(oj, "eps", c.optimizer.eps);
      }
    }
    get(j, "epochs", c.epochs);
    get(j, "batch_size", c.batch_size);
    get(j, "seed", c.seed);
    get(j, "dataset", c.dataset_path);
    get(j, "output", c.output_path);
    get(j, "huber_delta", c.huber_delta);
    get(j, "regression_rel_tol", c.regression_rel_tol);
    get(j, "regression_abs_floor", c.regression_abs_floor);
    get(j, "train_fraction", c.train_fraction);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid experiment config: ") + e.what());
  }
  return c;
}

std::vector<Tensor> model_inputs(const Batch& batch, std::size_t num_frames) {
  if (num_frames == 1) return {batch.frame_curr};
  return {batch.frame_prev, batch.frame_curr};
}

Predictor model_predictor(const MultiStreamModel& model) {
  return [&model](const Batch& batch) {
    const auto inputs = model_inputs(batch, model.config().num_frames);
    return model.forward(inputs);
  };
}

TaskLossVector task_losses(const ForwardResult& out, const Batch& batch, std::span<const Task> tasks,
                           double huber_delta) {
  TaskLossVector losses;
  losses.reserve(tasks.size());
  for (Task t : tasks) {
    const auto it = out.raw.find(t);
    if (it == out.raw.end()) throw ConfigError("model has no head for task " + std::string(task_name(t)));
    Tensor loss;
    switch (t) {
      case Task::segmentation: loss = losses::cross_entropy(it->second, batch.seg); break;
      case Task::depth: loss = losses::huber(it->second, batch.depth, HuberParams{huber_delta}); break;
      case Task::motion: loss = losses::cross_entropy(it->second, batch.motion); break;
    }
    losses.push_back({std::string(task_name(t)), loss});
  }
  return losses;
}

EvalMetrics evaluate(const Predictor& predictor, std::span<const FramePairSample> split,
                     const ExperimentConfig& config) {
  if (split.empty()) throw ConfigError("evaluate: empty split");
  NoGradGuard no_grad;
  std::map<Task, double> loss_sum;
  std::map<Task, std::size_t> hits;
  std::size_t pixels = 0;
  for (std::size_t start = 0; start < split.size(); start += config.batch_size) {
    const std::size_t end = std::min(split.size(), start + config.batch_size);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Batch batch = collate(split, idx);
    const ForwardResult out = predictor(batch);
    const TaskLossVector losses = task_losses(out, batch, config.tasks, config.huber_delta);
    const double weight = static_cast<double>(batch.size());
    for (std::size_t i = 0; i < config.tasks.size(); ++i) loss_sum[config.tasks[i]] += weight * losses[i].loss.item();
    const std::size_t batch_pixels = batch.seg.size();
    for (Task t : config.tasks) {
      double acc = 0.0;
      switch (t) {
        case Task::segmentation:
          acc = losses::pixel_accuracy(losses::argmax_channels(out.raw.at(t)), batch.seg);
          break;
        case Task::motion:
          acc = losses::pixel_accuracy(losses::argmax_channels(out.raw.at(t)), batch.motion);
          break;
        case Task::depth:
          acc = losses::regression_accuracy(out.raw.at(t), batch.depth, config.regression_rel_tol,
                                            config.regression_abs_floor);
          break;
      }
      hits[t] += static_cast<std::size_t>(std::llround(acc * static_cast<double>(batch_pixels)));
    }
    pixels += batch_pixels;
  }
  EvalMetrics m;
  for (Task t : config.tasks) {
    m.loss[t] = loss_sum[t] / static_cast<double>(split.size());
    m.accuracy[t] = static_cast<double>(hits[t]) / static_cast<double>(pixels);
  }
  return m;
}

EvalMetrics evaluate(const MultiStreamModel& model, std::span<const FramePairSample> split,
                     const ExperimentConfig& config) {
  for (Task t : config.tasks) {
    if (!model.has_task(t)) throw ConfigError("evaluate: model has no head for task " + std::string(task_name(t)));
  }
  return evaluate(model_predictor(model), split, config);
}

TrainResult train(const ExperimentConfig& config, std::span<const FramePairSample> train_split,
                  std::span<const FramePairSample> val_split, std::size_t num_classes, const EpochCallback& on_epoch) {
  config.validate();
  if (train_split.empty() || val_split.empty()) throw DataError("train: train and validation splits must be non-empty");
  const std::size_t h = train_split[0].seg.h, w = train_split[0].seg.w;
  if (h % 8 != 0 || w % 8 != 0) throw DataError("train: dataset resolution must be divisible by 8");

  TrainResult result{MultiStreamModel(config.model_config(num_classes)), {},
                     LossCombiner(config.combiner, config.tasks.size())};
  MultiStreamModel& model = result.model;
  LossCombiner& combiner = result.combiner;

  std::vector<Tensor> params = model.parameter_tensors();
  for (const Tensor& t : combiner.trainable()) params.push_back(t);

  std::unique_ptr<optim::Optimizer> opt;
  if (config.optimizer.kind == "sgd") {
    opt = std::make_unique<optim::Sgd>(config.optimizer.lr);
  } else {
    opt = std::make_unique<optim::Adam>(optim::AdamHyper{config.optimizer.lr, config.optimizer.beta1,
                                                         config.optimizer.beta2, config.optimizer.eps});
  }

  const std::size_t n_tasks = config.tasks.size();
  std::vector<std::size_t> order(train_split.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    rng::Engine eng(rng::mix(config.seed, rng::fnv1a("epoch") + epoch));
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(rng::uniform_int(eng, 0, static_cast<std::int64_t>(i)));
      std::swap(order[i], order[j]);
    }

    std::vector<double> loss_sum(n_tasks, 0.0), weight_sum(n_tasks, 0.0);
    double combined_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const Batch batch = collate(train_split, idx);
      const auto inputs = model_inputs(batch, config.num_frames);
      const ForwardResult out = model.forward(inputs);
      const TaskLossVector raw = task_losses(out, batch, config.tasks, config.huber_delta);

      std::vector<double> values(n_tasks);
      for (std::size_t i = 0; i < n_tasks; ++i) {
        values[i] = raw[i].loss.item();
        if (!std::isfinite(values[i])) {
          throw NumericError("non-finite loss for task '" + raw[i].task + "' at epoch " + std::to_string(epoch));
        }
      }
      const TaskLossVector floored = combiners::floor_losses(raw, config.combiner.epsilon);
      const Tensor total = combiner.combine(floored);
      if (!std::isfinite(total.item())) throw NumericError("non-finite combined loss at epoch " + std::to_string(epoch));
      const std::vector<double> w = combiner.task_weights(values);
      backward(total);
      opt->step(params);

      for (std::size_t i = 0; i < n_tasks; ++i) {
        loss_sum[i] += values[i];
        weight_sum[i] += w[i];
      }
      combined_sum += total.item();
      ++steps;
    }

    std::vector<double> epoch_means(n_tasks);
    for (std::size_t i = 0; i < n_tasks; ++i) epoch_means[i] = loss_sum[i] / static_cast<double>(steps);

    MetricsRecord rec;
    rec.epoch = epoch;
    rec.combined_loss = combined_sum / static_cast<double>(steps);
    const EvalMetrics val = evaluate(model, val_split, config);
    for (std::size_t i = 0; i < n_tasks; ++i) {
      const Task t = config.tasks[i];
      TaskEpochMetrics& tm = rec.tasks[t];
      tm.train_loss = epoch_means[i];
      tm.val_loss = val.loss.at(t);
      tm.val_accuracy = val.accuracy.at(t);
      tm.weight = weight_sum[i] / static_cast<double>(steps);
    }
    combiner.end_epoch(epoch_means);
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

TrainResult train(const ExperimentConfig& config, const Dataset& dataset, const EpochCallback& on_epoch) {
  if (dataset.samples.empty()) throw DataError("train: dataset is empty");
  auto [train_split, val_split] = split(dataset.samples, config.train_fraction, config.seed);
  return train(config, train_split, val_split, dataset.num_classes, on_epoch);
}

void write_metrics_csv(std::ostream& os, std::span<const Task> tasks, std::span<const MetricsRecord> history) {
  os << "epoch";
  for (Task t : tasks) {
    const std::string n(task_name(t));
    os << ",train_loss_" << n << ",val_loss_" << n << ",val_accuracy_" << n << ",weight_" << n;
  }
  os << ",combined_loss\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
  };
  for (const auto& rec : history) {
    os << rec.epoch;
    for (Task t : tasks) {
      const auto& m = rec.tasks.at(t);
      os << ',' << num(m.train_loss);
      os << ',' << num(m.val_loss);
      os << ',' << num(m.val_accuracy);
      os << ',' << num(m.weight);
    }
    os << ',' << num(rec.combined_loss) << '\n';
  }
}

}  // namespace mtl
