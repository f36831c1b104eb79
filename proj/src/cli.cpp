#include "mtl/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "mtl/checkpoint.hpp"
#include "mtl/error.hpp"

namespace mtl::cli {

namespace fs = std::filesystem;

namespace {

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
}

std::vector<Task> parse_task_list(const std::string& text) {
  std::vector<Task> tasks;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) tasks.push_back(parse_task(item));
  }
  if (tasks.empty()) throw ConfigError("empty task list");
  return tasks;
}

std::string fmt(double v, int precision = 17) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
  return buf;
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f%%", 100.0 * v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

constexpr Task kAllTasks[] = {Task::segmentation, Task::depth, Task::motion};

CombinerConfig combiner_from_json(const nlohmann::json& j, const CombinerConfig& base) {
  nlohmann::json wrapper{{"combiner", j}};
  ExperimentConfig c;
  c.combiner = base;
  return experiment_config_from_json(wrapper, c).combiner;
}

}  // namespace

void CompareSpec::validate() const {
  if (combiners.empty()) throw ConfigError("compare: combiner list is empty");
  if (seeds.empty()) throw ConfigError("compare: seed list is empty");
  if (frames.empty()) throw ConfigError("compare: frame list is empty");
  if (task_sets.empty()) throw ConfigError("compare: task set list is empty");
  for (std::size_t f : frames) {
    if (f != 1 && f != 2) throw ConfigError("compare: frames must be 1 or 2");
  }
  for (const auto& ts : task_sets) {
    if (ts.empty()) throw ConfigError("compare: empty task set");
  }
}

CompareSpec compare_spec_from_json(const nlohmann::json& j) {
  CompareSpec spec;
  try {
    if (j.contains("base")) spec.base = experiment_config_from_json(j.at("base"));
    if (j.contains("dataset")) spec.base.dataset_path = j.at("dataset").get<std::string>();
    for (const auto& c : j.at("combiners")) spec.combiners.push_back(combiner_from_json(c, spec.base.combiner));
    if (j.contains("frames")) spec.frames = j.at("frames").get<std::vector<std::size_t>>();
    if (j.contains("task_sets")) {
      for (const auto& ts : j.at("task_sets")) {
        std::vector<Task> tasks;
        for (const auto& t : ts) tasks.push_back(parse_task(t.get<std::string>()));
        spec.task_sets.push_back(std::move(tasks));
      }
    } else {
      spec.task_sets.push_back(spec.base.tasks);
    }
    spec.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid compare spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

std::string combiner_label(const CombinerConfig& c) {
  std::string label(combiner_name(c.kind));
  if (c.kind == CombinerKind::fls) label += "(m=" + std::to_string(c.focus_m) + ")";
  if (c.kind == CombinerKind::dwa && c.temperature != 2.0) label += "(T=" + fmt(c.temperature, 6) + ")";
  if (c.kind == CombinerKind::weighted) {
    label += "(";
    for (std::size_t i = 0; i < c.weights.size(); ++i) label += (i ? "," : "") + fmt(c.weights[i], 6);
    label += ")";
  }
  return label;
}

std::string task_set_label(const std::vector<Task>& tasks) {
  std::string label = std::to_string(tasks.size()) + "-task:";
  for (std::size_t i = 0; i < tasks.size(); ++i) label += (i ? "+" : "") + std::string(task_name(tasks[i]));
  return label;
}

CompareResult run_compare(const CompareSpec& spec, const Dataset& dataset, std::size_t jobs) {
  spec.validate();
  std::vector<CompareRow> rows;
  std::vector<ExperimentConfig> configs;
  for (std::size_t ti = 0; ti < spec.task_sets.size(); ++ti) {
    for (std::size_t ci = 0; ci < spec.combiners.size(); ++ci) {
      for (std::size_t frames : spec.frames) {
        for (std::uint64_t seed : spec.seeds) {
          ExperimentConfig cfg = spec.base;
          cfg.tasks = spec.task_sets[ti];
          cfg.combiner = spec.combiners[ci];
          cfg.num_frames = frames;
          cfg.seed = seed;
          CompareRow row;
          row.task_set_index = ti;
          row.combiner_index = ci;
          row.task_set = task_set_label(cfg.tasks);
          row.combiner = combiner_label(cfg.combiner);
          row.label = (frames == 2 && cfg.combiner.kind == CombinerKind::gls) ? "multinet++" : row.combiner;
          row.frames = frames;
          row.seed = seed;
          rows.push_back(std::move(row));
          configs.push_back(std::move(cfg));
        }
      }
    }
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < rows.size(); i = next++) {
      CompareRow& row = rows[i];
      const ExperimentConfig& cfg = configs[i];
      try {
        row.params = count_params(MultiStreamModel(cfg.model_config(dataset.num_classes)));
        TrainResult r = train(cfg, dataset);
        row.history = std::move(r.history);
        row.final_metrics = row.history.back().tasks;
      } catch (const std::exception& e) {
        row.status = std::string("error: ") + e.what();
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(jobs, rows.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  std::stable_sort(rows.begin(), rows.end(), [](const CompareRow& a, const CompareRow& b) {
    return std::tie(a.task_set_index, a.combiner_index, a.frames, a.seed) <
           std::tie(b.task_set_index, b.combiner_index, b.frames, b.seed);
  });
  return {std::move(rows)};
}

void write_compare_outputs(const CompareResult& result, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir.string() + ": " + ec.message());

  {
    std::ofstream os(dir / "summary.csv");
    os << "task_set,combiner,label,frames,seed,status";
    for (Task t : kAllTasks) os << ",val_accuracy_" << task_name(t) << ",val_loss_" << task_name(t);
    os << '\n';
    for (const auto& r : result.rows) {
      os << r.task_set << ',' << r.combiner << ',' << r.label << ',' << r.frames << ',' << r.seed << ','
         << (r.status == "ok" ? "ok" : "failed");
      for (Task t : kAllTasks) {
        const auto it = r.final_metrics.find(t);
        if (it == r.final_metrics.end()) {
          os << ",,";
        } else {
          os << ',' << fmt(it->second.val_accuracy) << ',' << fmt(it->second.val_loss);
        }
      }
      os << '\n';
    }
  }
  {
    std::ofstream os(dir / "curves.csv");
    os << "task_set,combiner,frames,seed,epoch,task,train_loss,val_loss,val_accuracy,weight\n";
    for (const auto& r : result.rows) {
      for (const auto& rec : r.history) {
        for (const auto& [task, m] : rec.tasks) {
          os << r.task_set << ',' << r.combiner << ',' << r.frames << ',' << r.seed << ',' << rec.epoch << ','
             << task_name(task) << ',' << fmt(m.train_loss) << ',' << fmt(m.val_loss) << ',' << fmt(m.val_accuracy)
             << ',' << fmt(m.weight) << '\n';
        }
      }
    }
  }
  {
    std::ofstream os(dir / "params.csv");
    os << "task_set,frames,encoder,segmentation_decoder,depth_decoder,motion_decoder,total\n";
    std::set<std::pair<std::string, std::size_t>> seen;
    for (const auto& r : result.rows) {
      if (!seen.insert({r.task_set, r.frames}).second || r.params.total == 0) continue;
      os << r.task_set << ',' << r.frames << ',' << r.params.encoder;
      for (Task t : kAllTasks) {
        const auto it = r.params.decoders.find(t);
        os << ',' << (it == r.params.decoders.end() ? std::string() : std::to_string(it->second));
      }
      os << ',' << r.params.total << '\n';
    }
  }
  {
    std::ofstream os(dir / "summary.txt");
    os << std::left << std::setw(34) << "task set" << std::setw(18) << "method" << std::setw(8) << "frames"
       << std::setw(8) << "runs";
    for (Task t : kAllTasks) os << std::setw(14) << task_name(t);
    os << '\n';
    // Medians per (task set, combiner, frames) over successful runs.
    for (std::size_t i = 0; i < result.rows.size();) {
      std::size_t j = i;
      const auto& head = result.rows[i];
      std::map<Task, std::vector<double>> acc;
      std::size_t ok = 0;
      for (; j < result.rows.size() && result.rows[j].task_set_index == head.task_set_index &&
             result.rows[j].combiner_index == head.combiner_index && result.rows[j].frames == head.frames;
           ++j) {
        if (result.rows[j].status != "ok") continue;
        ++ok;
        for (const auto& [t, m] : result.rows[j].final_metrics) acc[t].push_back(m.val_accuracy);
      }
      os << std::setw(34) << head.task_set << std::setw(18) << head.label << std::setw(8) << head.frames
         << std::setw(8) << (std::to_string(ok) + "/" + std::to_string(j - i));
      for (Task t : kAllTasks) os << std::setw(14) << (acc.count(t) ? pct(median(acc[t])) : std::string("-"));
      os << '\n';
      i = j;
    }
    for (const auto& r : result.rows) {
      if (r.status != "ok") {
        os << "failed: " << r.task_set << ' ' << r.combiner << " frames=" << r.frames << " seed=" << r.seed << ": "
           << r.status << '\n';
      }
    }
  }
}

namespace {

struct SharedFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool quiet = false;
};

void add_shared(CLI::App* cmd, SharedFlags& f, bool out_required) {
  cmd->add_option("--config", f.config, "JSON configuration file");
  cmd->add_option("--seed", f.seed, "PRNG seed (overrides the config file)");
  auto* out = cmd->add_option("--out", f.out, "Output directory");
  if (out_required) out->required();
  cmd->add_flag("--quiet", f.quiet, "Suppress progress output");
}

int cmd_generate(const SharedFlags& f, const nlohmann::json& overrides, std::size_t count, std::ostream& out) {
  SceneSpec spec;
  if (!f.config.empty()) spec = scene_spec_from_json(read_json_file(f.config));
  spec = scene_spec_from_json(overrides, spec);
  if (f.seed) spec.seed = *f.seed;
  spec.validate();
  const Dataset d = make_dataset(spec, count);
  write_dataset(d, f.out);
  if (!f.quiet) {
    out << "generated " << d.samples.size() << " samples at " << d.height << "x" << d.width << ", "
        << d.num_classes << " classes, " << count_motion_pixels(d.samples) << " motion-positive pixels -> " << f.out
        << '\n';
  }
  return kOk;
}

ExperimentConfig resolve_experiment(const SharedFlags& f, const nlohmann::json& overrides) {
  ExperimentConfig cfg;
  if (!f.config.empty()) cfg = experiment_config_from_json(read_json_file(f.config));
  cfg = experiment_config_from_json(overrides, cfg);
  if (f.seed) cfg.seed = *f.seed;
  if (!f.out.empty()) cfg.output_path = f.out;
  cfg.validate();
  return cfg;
}

int cmd_train(const SharedFlags& f, const nlohmann::json& overrides, std::ostream& out) {
  const ExperimentConfig cfg = resolve_experiment(f, overrides);
  if (cfg.dataset_path.empty()) throw ConfigError("train: no dataset (use --data or \"dataset\" in the config)");
  if (cfg.output_path.empty()) throw ConfigError("train: no output directory (use --out)");
  const Dataset data = load_dataset(cfg.dataset_path);
  TrainResult r = train(cfg, data, [&](const MetricsRecord& rec) {
    if (f.quiet) return;
    out << "epoch " << rec.epoch << "  combined " << fmt(rec.combined_loss, 6);
    for (const auto& [t, m] : rec.tasks) out << "  " << task_name(t) << " val_acc " << pct(m.val_accuracy);
    out << "  (" << fmt(rec.wall_seconds, 3) << " s)\n";
  });
  const fs::path dir(cfg.output_path);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create output directory " + dir.string() + ": " + ec.message());
  {
    std::ofstream os(dir / "metrics.csv");
    if (!os) throw DataError("cannot write " + (dir / "metrics.csv").string());
    write_metrics_csv(os, cfg.tasks, r.history);
  }
  {
    std::ofstream os(dir / "config.json");
    os << experiment_config_to_json(cfg).dump(2) << '\n';
  }
  save_checkpoint(r.model, dir / "model.ckpt", {{"experiment", experiment_config_to_json(cfg)}});
  if (!f.quiet) out << "wrote " << (dir / "metrics.csv").string() << " and " << (dir / "model.ckpt").string() << '\n';
  return kOk;
}

int cmd_eval(const SharedFlags& f, const nlohmann::json& overrides, const std::string& checkpoint,
             const std::string& which, std::ostream& out) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint);
  ExperimentConfig cfg;
  if (ck.header.contains("extra") && ck.header["extra"].contains("experiment")) {
    cfg = experiment_config_from_json(ck.header["extra"]["experiment"]);
  }
  if (!f.config.empty()) cfg = experiment_config_from_json(read_json_file(f.config), cfg);
  cfg = experiment_config_from_json(overrides, cfg);
  if (f.seed) cfg.seed = *f.seed;
  cfg.tasks = ck.model.config().tasks;
  cfg.num_frames = ck.model.config().num_frames;
  if (cfg.dataset_path.empty()) throw ConfigError("eval: no dataset (use --data)");
  const Dataset data = load_dataset(cfg.dataset_path);
  EvalMetrics m;
  if (which == "all") {
    m = evaluate(ck.model, data.samples, cfg);
  } else {
    const auto parts = split(data.samples, cfg.train_fraction, cfg.seed);
    m = evaluate(ck.model, which == "train" ? parts.first : parts.second, cfg);
  }
  nlohmann::json j = nlohmann::json::object();
  for (Task t : cfg.tasks) {
    j[std::string(task_name(t))] = {{"loss", m.loss.at(t)}, {"accuracy", m.accuracy.at(t)}};
  }
  if (!f.quiet) out << j.dump(2) << '\n';
  if (!f.out.empty()) {
    fs::create_directories(f.out);
    std::ofstream os(fs::path(f.out) / "eval.json");
    os << j.dump(2) << '\n';
  }
  return kOk;
}

int cmd_compare(const SharedFlags& f, const nlohmann::json& overrides, std::size_t jobs, std::ostream& out) {
  if (f.config.empty()) throw ConfigError("compare: --config with a compare spec is required");
  nlohmann::json j = read_json_file(f.config);
  if (!overrides.empty()) {
    if (!j.contains("base")) j["base"] = nlohmann::json::object();
    for (const auto& [k, v] : overrides.items()) j["base"][k] = v;
  }
  CompareSpec spec = compare_spec_from_json(j);
  if (f.seed) spec.seeds = {*f.seed};
  if (spec.base.dataset_path.empty()) throw ConfigError("compare: no dataset (use --data or \"dataset\")");
  const Dataset data = load_dataset(spec.base.dataset_path);
  const CompareResult result = run_compare(spec, data, jobs);
  write_compare_outputs(result, f.out);
  if (!f.quiet) {
    std::ifstream is(fs::path(f.out) / "summary.txt");
    out << is.rdbuf();
  }
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-task learning with geometric loss strategies on synthetic video"};
  app.require_subcommand(1);

  SharedFlags gen_flags, train_flags, eval_flags, cmp_flags;
  nlohmann::json gen_over = nlohmann::json::object();
  nlohmann::json train_over = nlohmann::json::object();
  nlohmann::json eval_over = nlohmann::json::object();
  nlohmann::json cmp_over = nlohmann::json::object();

  auto* gen = app.add_subcommand("generate", "Generate a synthetic dataset");
  add_shared(gen, gen_flags, true);
  std::size_t count = 200;
  gen->add_option("--count", count, "Number of frame pairs")->check(CLI::PositiveNumber);
  std::optional<std::size_t> height, width, classes, min_objects, max_objects;
  std::optional<double> moving_fraction, depth_min, depth_max;
  std::optional<int> max_disp;
  gen->add_option("--height", height);
  gen->add_option("--width", width);
  gen->add_option("--classes", classes);
  gen->add_option("--min-objects", min_objects);
  gen->add_option("--max-objects", max_objects);
  gen->add_option("--moving-fraction", moving_fraction);
  gen->add_option("--max-displacement", max_disp);
  gen->add_option("--depth-min", depth_min);
  gen->add_option("--depth-max", depth_max);

  auto* tr = app.add_subcommand("train", "Train one experiment");
  add_shared(tr, train_flags, false);
  std::optional<std::string> data, combiner, tasks, optimizer;
  std::optional<std::size_t> epochs, frames, batch;
  std::optional<double> lr;
  tr->add_option("--data", data, "Dataset directory");
  tr->add_option("--combiner", combiner, "equal|weighted|gls|fls|uncertainty|dwa");
  tr->add_option("--tasks", tasks, "Comma-separated task list");
  tr->add_option("--optimizer", optimizer, "adam|sgd");
  tr->add_option("--epochs", epochs);
  tr->add_option("--frames", frames);
  tr->add_option("--batch-size", batch);
  tr->add_option("--lr", lr);

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_shared(ev, eval_flags, false);
  std::string checkpoint;
  std::string which = "val";
  std::optional<std::string> eval_data;
  ev->add_option("--checkpoint", checkpoint, "Checkpoint written by train")->required();
  ev->add_option("--data", eval_data, "Dataset directory");
  ev->add_option("--split", which, "val|train|all")->check(CLI::IsMember({"val", "train", "all"}));

  auto* cmp = app.add_subcommand("compare", "Sweep combiners, frame counts, task sets and seeds");
  add_shared(cmp, cmp_flags, true);
  std::size_t jobs = 1;
  std::optional<std::string> cmp_data;
  std::optional<std::size_t> cmp_epochs;
  cmp->add_option("--jobs", jobs, "Concurrent runs")->check(CLI::PositiveNumber);
  cmp->add_option("--data", cmp_data, "Dataset directory");
  cmp->add_option("--epochs", cmp_epochs);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsage;
  }

  try {
    if (gen->parsed()) {
      if (height) gen_over["height"] = *height;
      if (width) gen_over["width"] = *width;
      if (classes) gen_over["num_classes"] = *classes;
      if (min_objects) gen_over["min_objects"] = *min_objects;
      if (max_objects) gen_over["max_objects"] = *max_objects;
      if (moving_fraction) gen_over["moving_fraction"] = *moving_fraction;
      if (max_disp) gen_over["max_displacement"] = *max_disp;
      if (depth_min) gen_over["depth_min"] = *depth_min;
      if (depth_max) gen_over["depth_max"] = *depth_max;
      return cmd_generate(gen_flags, gen_over, count, out);
    }
    if (tr->parsed()) {
      if (data) train_over["dataset"] = *data;
      if (combiner) train_over["combiner"] = {{"name", *combiner}};
      if (tasks) {
        nlohmann::json list = nlohmann::json::array();
        for (Task t : parse_task_list(*tasks)) list.push_back(std::string(task_name(t)));
        train_over["tasks"] = list;
      }
      if (optimizer) train_over["optimizer"] = {{"kind", *optimizer}};
      if (lr) train_over["optimizer"]["lr"] = *lr;
      if (epochs) train_over["epochs"] = *epochs;
      if (frames) train_over["num_frames"] = *frames;
      if (batch) train_over["batch_size"] = *batch;
      return cmd_train(train_flags, train_over, out);
    }
    if (ev->parsed()) {
      if (eval_data) eval_over["dataset"] = *eval_data;
      return cmd_eval(eval_flags, eval_over, checkpoint, which, out);
    }
    if (cmp->parsed()) {
      if (cmp_data) cmp_over["dataset"] = *cmp_data;
      if (cmp_epochs) cmp_over["epochs"] = *cmp_epochs;
      return cmd_compare(cmp_flags, cmp_over, jobs, out);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric abort: " << e.what() << '\n';
    return kNumericAbort;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsage;
}

}  // namespace mtl::cli
