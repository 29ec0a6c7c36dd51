#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "d2loc/config.hpp"
#include "d2loc/data.hpp"
#include "d2loc/eval.hpp"
#include "d2loc/infer.hpp"
#include "d2loc/train.hpp"

namespace d2loc::pipeline {

// synth: dataset + manifests + resolved config under out_dir.
data::SynthOutput run_synth(const config::RunConfig& cfg, const std::filesystem::path& out_dir);

struct TrainArtifacts {
    std::filesystem::path checkpoint_path;
    std::filesystem::path log_path;
    train::TrainResult result;
};

TrainArtifacts run_train(const config::RunConfig& cfg, const std::filesystem::path& manifest_path,
                         const std::filesystem::path& out_dir);

// Per-video inference over a whole manifest; videos are processed in parallel.
std::vector<infer::Detection> infer_manifest(const train::Checkpoint& ckpt,
                                             const data::DatasetManifest& manifest,
                                             const infer::InferConfig& cfg,
                                             std::size_t threads = 0);

struct InferArtifacts {
    std::filesystem::path detections_path;
    std::vector<infer::Detection> detections;
};

InferArtifacts run_infer(const config::RunConfig& cfg, const std::filesystem::path& checkpoint_path,
                         const std::filesystem::path& manifest_path,
                         const std::filesystem::path& out_dir);

eval::EvalReport run_eval(const std::filesystem::path& detections_path,
                          const std::filesystem::path& manifest_path,
                          const std::vector<double>& ious, const std::filesystem::path& out_dir);

struct AblateRow {
    std::string name;
    std::vector<double> map_at_05;  // per seed
    double mean_map_at_05 = 0.0;
    double mean_f1_at_05 = 0.0;
};

struct AblateResult {
    std::vector<AblateRow> rows;  // cross_entropy, focal, discriminative, full
    std::filesystem::path report_path;
};

// Trains the four-configuration ladder on one dataset per seed and compares
// mAP@0.5 on the test split.
AblateResult run_ablate(const config::RunConfig& cfg,
                        const std::filesystem::path& train_manifest_path,
                        const std::filesystem::path& test_manifest_path,
                        const std::vector<std::uint64_t>& seeds,
                        const std::filesystem::path& out_dir);

}  // namespace d2loc::pipeline
