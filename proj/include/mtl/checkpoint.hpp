#pragma once

#include <filesystem>

#include "json.hpp"
#include "mtl/network.hpp"

namespace mtl {

nlohmann::json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

// File layout:
//   8 bytes   magic "MTLCKPT1"
//   8 bytes   header length L, unsigned little-endian
//   L bytes   UTF-8 JSON header: {"format", "version", "dtype": "f64",
//             "endianness": "little", "config": {...}, "extra": {...},
//             "tensors": [{"name", "shape", "offset", "count"}]}
//   payload   tensors back to back as little-endian doubles; offsets are
//             byte offsets from the start of the payload
void save_checkpoint(const MultiStreamModel& model, const std::filesystem::path& path,
                     const nlohmann::json& extra = nlohmann::json::object());

struct LoadedCheckpoint {
  MultiStreamModel model;
  nlohmann::json header;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mtl
