#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "trace/nn/network.hpp"

namespace trace::nn {

inline constexpr const char* kCheckpointFormat = "trace-ckpt-v1";

/// {"format": "trace-ckpt-v1", "config": {...},
///  "tensors": [{"name", "shape": [rows, cols], "values": [row-major]}]}
nlohmann::json to_json(const NetworkParams& params);
NetworkParams params_from_json(const nlohmann::json& doc);

void save_checkpoint(const NetworkParams& params, const std::filesystem::path& path);
NetworkParams load_checkpoint(const std::filesystem::path& path);

nlohmann::json config_to_json(const NetworkConfig& config);
NetworkConfig config_from_json(const nlohmann::json& doc);

}  // namespace trace::nn
