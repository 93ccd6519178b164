#pragma once

// Model checkpoint file: "RSNN" magic, format version, config as JSON, then
// named float32 tensors, all little-endian. Loading preserves file order, so
// save(load(x)) reproduces x byte for byte.

#include <string>
#include <utility>

#include <json.hpp>

#include "radioses/nn/model.hpp"

namespace radioses::nn {

nlohmann::json config_to_json(const NetConfig& cfg);
NetConfig config_from_json(const nlohmann::json& j);

void save_checkpoint(const std::string& path, const NetConfig& cfg,
                     const ModelParams<float>& params);
std::pair<NetConfig, ModelParams<float>> load_checkpoint(
    const std::string& path);

}  // namespace radioses::nn
