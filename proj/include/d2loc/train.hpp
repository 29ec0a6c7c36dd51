#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "d2loc/data.hpp"
#include "d2loc/losses.hpp"
#include "d2loc/model.hpp"

namespace d2loc::train {

struct TrainConfig {
    std::size_t iterations = 20000;  // reference setting; desk-scale runs use 2000
    std::size_t batch_size = 10;
    double lr = 1e-4;
    double weight_decay = 0.005;  // coupled L2, added to gradients
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 1;
    losses::LossConfig loss;
    std::size_t checkpoint_every = 0;  // 0 = final checkpoint only

    void validate() const;
};

struct OptimizerState {
    std::vector<Matrix> first_moment;
    std::vector<Matrix> second_moment;
    std::size_t step = 0;
};

OptimizerState make_optimizer_state(const model::ModelParams& params);

// One Adam step with bias correction over params.all(); grads are consumed
// and zeroed. Throws NumericError on non-finite gradients.
void adam_step(model::ModelParams& params, OptimizerState& state, const TrainConfig& cfg);

struct LogRow {
    std::size_t iteration = 0;
    double discriminative = 0.0;
    double denoising_snippet = 0.0;
    double denoising_video = 0.0;
    double total = 0.0;
};

struct TrainResult {
    model::ModelParams params;
    OptimizerState optimizer;
    losses::EmaRef ema;
    std::size_t iteration = 0;
    std::vector<LogRow> log;
};

using CheckpointHook = std::function<void(const TrainResult&, std::size_t iteration)>;

TrainResult train(const data::DatasetManifest& manifest, const model::ModelConfig& model_cfg,
                  const TrainConfig& train_cfg, const CheckpointHook& hook = nullptr);

void write_log_csv(const std::vector<LogRow>& log, const std::filesystem::path& path);

struct Checkpoint {
    model::ModelConfig model_cfg;
    model::ModelParams params;
    OptimizerState optimizer;
    losses::EmaRef ema;
    std::size_t iteration = 0;
};

// Checkpoint file: magic "D2CK", u32 version, model config, parameter arrays
// (u32 rows, u32 cols, float64 LE payload), optimizer moments, EMA reference,
// iteration count. Everything little-endian.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace d2loc::train
