#include "mtl/network.hpp"

#include <algorithm>
#include <cmath>

#include "mtl/error.hpp"
#include "mtl/ops.hpp"
#include "mtl/rng.hpp"

namespace mtl {

std::string_view task_name(Task task) {
  switch (task) {
    case Task::segmentation: return "segmentation";
    case Task::depth: return "depth";
    case Task::motion: return "motion";
  }
  return "unknown";
}

Task parse_task(std::string_view name) {
  if (name == "segmentation" || name == "seg") return Task::segmentation;
  if (name == "depth") return Task::depth;
  if (name == "motion") return Task::motion;
  throw ConfigError("unknown task '" + std::string(name) + "'; valid tasks: segmentation, depth, motion");
}

std::string_view aggregation_name(Aggregation mode) { return mode == Aggregation::concat ? "concat" : "sum"; }

Aggregation parse_aggregation(std::string_view name) {
  if (name == "concat") return Aggregation::concat;
  if (name == "sum") return Aggregation::sum;
  throw ConfigError("unknown aggregation '" + std::string(name) + "'; valid: concat, sum");
}

namespace {

std::string encoder_conv(std::size_t level) { return "encoder.conv" + std::to_string(level + 1); }

std::string decoder_prefix(Task task) { return "decoder." + std::string(task_name(task)); }

std::string lateral(Task task, std::size_t level) {
  return decoder_prefix(task) + ".lateral" + std::to_string(level + 1);
}

std::string head(Task task) { return decoder_prefix(task) + ".head"; }

// He-normal weights, zero bias.
void add_conv(std::vector<Parameter>& params, const std::string& name, const std::string& component,
              std::size_t cout, std::size_t cin, std::size_t k, rng::Engine& eng) {
  const double std_dev = std::sqrt(2.0 / static_cast<double>(cin * k * k));
  std::vector<double> w(cout * cin * k * k);
  for (double& v : w) v = std_dev * rng::normal(eng);
  params.push_back({name + ".weight", component, Tensor({cout, cin, k, k}, std::move(w), true)});
  params.push_back({name + ".bias", component, Tensor::zeros({cout}, true)});
}

}  // namespace

MultiStreamModel::MultiStreamModel(ModelConfig config) : config_(std::move(config)) {
  const auto& enc = config_.encoder;
  if (enc.levels != kEncoderLevels) throw ConfigError("encoder must have exactly 3 levels");
  if (enc.base_channels == 0) throw ConfigError("encoder base_channels must be positive");
  if (enc.kernel % 2 == 0) throw ConfigError("encoder kernel must be odd");
  if (config_.tasks.empty()) throw ConfigError("model needs at least one task");
  if (config_.num_frames != 1 && config_.num_frames != 2) {
    throw ConfigError("num_frames must be 1 or 2, got " + std::to_string(config_.num_frames));
  }
  if (config_.num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (config_.decoder_width == 0) throw ConfigError("decoder_width must be positive");
  for (std::size_t i = 0; i < config_.tasks.size(); ++i) {
    for (std::size_t j = i + 1; j < config_.tasks.size(); ++j) {
      if (config_.tasks[i] == config_.tasks[j]) throw ConfigError("duplicate task " + std::string(task_name(config_.tasks[i])));
    }
  }

  // One PRNG stream per component so the encoder initialization does not
  // depend on which decoders are attached.
  {
    rng::Engine eng(rng::mix(config_.seed, rng::fnv1a("encoder")));
    std::size_t cin = 3;
    for (std::size_t l = 0; l < kEncoderLevels; ++l) {
      const std::size_t cout = enc.base_channels << l;
      add_conv(params_, encoder_conv(l), "encoder", cout, cin, enc.kernel, eng);
      cin = cout;
    }
  }
  const auto agg = aggregated_channels();
  for (Task task : config_.tasks) {
    const std::string component(task_name(task));
    rng::Engine eng(rng::mix(config_.seed, rng::fnv1a(component)));
    for (std::size_t l = 0; l < kEncoderLevels; ++l) {
      add_conv(params_, lateral(task, l), component, config_.decoder_width, agg[l], 1, eng);
    }
    add_conv(params_, head(task), component, output_channels(task), config_.decoder_width, 1, eng);
  }
}

bool MultiStreamModel::has_task(Task task) const {
  return std::find(config_.tasks.begin(), config_.tasks.end(), task) != config_.tasks.end();
}

std::size_t MultiStreamModel::output_channels(Task task) const {
  switch (task) {
    case Task::segmentation: return config_.num_classes;
    case Task::depth: return 1;
    case Task::motion: return 2;
  }
  return 0;
}

std::vector<Tensor> MultiStreamModel::parameter_tensors() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

std::size_t MultiStreamModel::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  throw ConfigError("no parameter named '" + std::string(name) + "'");
}

const Tensor& MultiStreamModel::param(std::string_view name) const { return params_[index_of(name)].value; }

std::array<std::size_t, kEncoderLevels> MultiStreamModel::stream_channels() const {
  std::array<std::size_t, kEncoderLevels> c{};
  for (std::size_t l = 0; l < kEncoderLevels; ++l) c[l] = config_.encoder.base_channels << l;
  return c;
}

std::array<std::size_t, kEncoderLevels> MultiStreamModel::aggregated_channels() const {
  auto c = stream_channels();
  if (config_.aggregation == Aggregation::concat) {
    for (auto& v : c) v *= config_.num_frames;
  }
  return c;
}

FeatureLevels MultiStreamModel::encode(const Tensor& frame) const {
  if (frame.rank() != 4 || frame.dim(1) != 3) {
    throw ShapeError("encode: frame must be [N,3,H,W], got " + shape_str(frame.shape()));
  }
  if (frame.dim(2) % 8 != 0 || frame.dim(3) % 8 != 0) {
    throw ShapeError("encode: H and W must be divisible by 8, got " + shape_str(frame.shape()));
  }
  FeatureLevels taps;
  Tensor x = frame;
  for (std::size_t l = 0; l < kEncoderLevels; ++l) {
    const std::string base = encoder_conv(l);
    x = ops::maxpool2d(ops::relu(ops::conv2d(x, param(base + ".weight"), param(base + ".bias"))));
    taps[l] = x;
  }
  return taps;
}

FeatureLevels MultiStreamModel::aggregate(std::span<const FeatureLevels> streams) const {
  if (streams.size() != config_.num_frames) {
    throw ShapeError("aggregate: expected " + std::to_string(config_.num_frames) + " streams, got " +
                     std::to_string(streams.size()));
  }
  if (streams.size() == 1) return streams[0];
  FeatureLevels out;
  for (std::size_t l = 0; l < kEncoderLevels; ++l) {
    std::vector<Tensor> level;
    for (const auto& s : streams) level.push_back(s[l]);
    out[l] = config_.aggregation == Aggregation::concat ? ops::concat_channels(level) : ops::add(level);
  }
  return out;
}

Tensor MultiStreamModel::decode(Task task, const FeatureLevels& agg) const {
  auto project = [&](std::size_t level) {
    const std::string base = lateral(task, level);
    return ops::conv2d(agg[level], param(base + ".weight"), param(base + ".bias"));
  };
  Tensor x = ops::relu(project(2));
  x = ops::upsample_nearest(x, 2);
  x = ops::relu(ops::add(x, project(1)));
  x = ops::upsample_nearest(x, 2);
  x = ops::relu(ops::add(x, project(0)));
  // 1x1 head commutes with nearest upsampling; run it at the coarse grid.
  const std::string h = head(task);
  x = ops::conv2d(x, param(h + ".weight"), param(h + ".bias"));
  return ops::upsample_nearest(x, 2);
}

ForwardResult MultiStreamModel::forward(std::span<const Tensor> frames) const {
  if (frames.size() != config_.num_frames) {
    throw ShapeError("forward: model takes " + std::to_string(config_.num_frames) + " frames, got " +
                     std::to_string(frames.size()));
  }
  for (const auto& f : frames) {
    if (f.shape() != frames[0].shape()) throw ShapeError("forward: frames differ in shape");
  }
  std::vector<FeatureLevels> streams;
  streams.reserve(frames.size());
  for (const auto& f : frames) streams.push_back(encode(f));
  const FeatureLevels agg = aggregate(streams);

  ForwardResult result;
  for (Task task : config_.tasks) {
    Tensor out = decode(task, agg);
    if (task == Task::depth) {
      out = ops::softplus(out);
      result.raw[task] = out;
      result.predictions[task] = out;
    } else {
      result.raw[task] = out;
      result.predictions[task] = ops::softmax_channels(out);
    }
  }
  return result;
}

MultiStreamModel build_model(const ModelConfig& config) { return MultiStreamModel(config); }

MultiStreamModel build_model(const EncoderConfig& encoder, std::vector<Task> tasks, std::size_t num_frames,
                             Aggregation aggregation, std::size_t num_classes, std::uint64_t seed) {
  ModelConfig config;
  config.encoder = encoder;
  config.tasks = std::move(tasks);
  config.num_frames = num_frames;
  config.aggregation = aggregation;
  config.num_classes = num_classes;
  config.seed = seed;
  return MultiStreamModel(std::move(config));
}

ParamCountReport count_params(const MultiStreamModel& model) {
  ParamCountReport report;
  for (Task task : model.config().tasks) report.decoders[task] = 0;
  for (const auto& p : model.parameters()) {
    const std::size_t n = p.value.numel();
    if (p.component == "encoder") {
      report.encoder += n;
    } else {
      report.decoders[parse_task(p.component)] += n;
    }
    report.total += n;
  }
  return report;
}

}  // namespace mtl
