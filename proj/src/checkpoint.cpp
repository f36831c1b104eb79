#include "mtl/checkpoint.hpp"

#include <fstream>

#include "mtl/binary_io.hpp"
#include "mtl/error.hpp"

namespace mtl {

namespace {

constexpr char kMagic[8] = {'M', 'T', 'L', 'C', 'K', 'P', 'T', '1'};

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& config) {
  nlohmann::json tasks = nlohmann::json::array();
  for (Task t : config.tasks) tasks.push_back(std::string(task_name(t)));
  return {
      {"encoder",
       {{"base_channels", config.encoder.base_channels},
        {"levels", config.encoder.levels},
        {"kernel", config.encoder.kernel}}},
      {"tasks", tasks},
      {"num_frames", config.num_frames},
      {"aggregation", std::string(aggregation_name(config.aggregation))},
      {"num_classes", config.num_classes},
      {"decoder_width", config.decoder_width},
      {"seed", config.seed},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    const auto& enc = j.at("encoder");
    c.encoder.base_channels = enc.at("base_channels").get<std::size_t>();
    c.encoder.levels = enc.at("levels").get<std::size_t>();
    c.encoder.kernel = enc.at("kernel").get<std::size_t>();
    c.tasks.clear();
    for (const auto& t : j.at("tasks")) c.tasks.push_back(parse_task(t.get<std::string>()));
    c.num_frames = j.at("num_frames").get<std::size_t>();
    c.aggregation = parse_aggregation(j.at("aggregation").get<std::string>());
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.decoder_width = j.at("decoder_width").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed model config: ") + e.what());
  }
}

void save_checkpoint(const MultiStreamModel& model, const std::filesystem::path& path, const nlohmann::json& extra) {
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& p : model.parameters()) {
    tensors.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"offset", offset}, {"count", p.value.numel()}});
    offset += p.value.numel() * sizeof(double);
  }
  const nlohmann::json header{{"format", "mtl-checkpoint"}, {"version", 1},        {"dtype", "f64"},
                              {"endianness", "little"},    {"config", model_config_to_json(model.config())},
                              {"extra", extra},            {"tensors", tensors}};
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic, sizeof(kMagic));
  binary_io::write_value<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : model.parameters()) binary_io::write_values<double>(os, p.value.values());
  if (!os) throw DataError("failed writing checkpoint: " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || !std::equal(std::begin(magic), std::end(magic), std::begin(kMagic))) {
    throw DataError("not a checkpoint file (bad magic): " + path.string());
  }
  std::uint64_t header_len = 0;
  if (!binary_io::read_values<std::uint64_t>(is, std::span(&header_len, 1)) || header_len > (1u << 26)) {
    throw DataError("corrupt checkpoint header length: " + path.string());
  }
  std::string text(header_len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!is) throw DataError("truncated checkpoint header: " + path.string());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  if (header.value("format", "") != "mtl-checkpoint" || header.value("dtype", "") != "f64") {
    throw DataError("unsupported checkpoint format in " + path.string());
  }
  MultiStreamModel model(model_config_from_json(header.at("config")));
  const std::streampos payload = is.tellg();
  auto& params = model.parameters();
  const auto& entries = header.at("tensors");
  if (entries.size() != params.size()) {
    throw DataError("checkpoint holds " + std::to_string(entries.size()) + " tensors, model expects " +
                    std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = entries[i];
    Parameter& p = params[i];
    if (e.at("name").get<std::string>() != p.name || e.at("shape").get<Shape>() != p.value.shape()) {
      throw DataError("checkpoint tensor " + e.at("name").get<std::string>() + " does not match model parameter " +
                      p.name);
    }
    is.seekg(payload + static_cast<std::streamoff>(e.at("offset").get<std::uint64_t>()));
    if (!binary_io::read_values<double>(is, p.value.mutable_values())) {
      throw DataError("truncated checkpoint payload for " + p.name);
    }
  }
  return {std::move(model), std::move(header)};
}

}  // namespace mtl
