#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "d2loc/data.hpp"
#include "d2loc/infer.hpp"
#include "d2loc/model.hpp"
#include "d2loc/train.hpp"

namespace d2loc::config {

// One config file per run: sections model/train/loss/infer/synth, unknown keys
// rejected, dotted-key command line overrides, resolved copy echoed next to
// every output.
struct RunConfig {
    model::ModelConfig model;
    train::TrainConfig train;  // train.loss carries the loss section
    infer::InferConfig infer;
    data::SynthConfig synth;
};

RunConfig desk_defaults();  // synthetic-scale settings (2000 iterations)

nlohmann::ordered_json to_json(const RunConfig& cfg);
RunConfig from_json(const nlohmann::json& j);

// overrides are dotted key=value pairs, e.g. "train.lr=0.001".
RunConfig load_run_config(const std::optional<std::filesystem::path>& path,
                          const std::vector<std::string>& overrides);

void echo_config(const RunConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace d2loc::config
