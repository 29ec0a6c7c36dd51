#include "d2loc/train.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "d2loc/errors.hpp"

namespace d2loc::train {

void TrainConfig::validate() const {
    if (iterations == 0) throw ConfigError("iterations must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (lr <= 0.0) throw ConfigError("lr must be positive");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0) || !(adam_beta2 > 0.0 && adam_beta2 < 1.0))
        throw ConfigError("adam betas must lie in (0, 1)");
    if (adam_eps <= 0.0) throw ConfigError("adam_eps must be positive");
    if (loss.classification_variant == losses::ClassificationVariant::discriminative &&
        batch_size < 2)
        throw ConfigError("discriminative loss needs batch_size >= 2");
    loss.validate();
}

OptimizerState make_optimizer_state(const model::ModelParams& params) {
    OptimizerState state;
    for (const nd::Array& p : params.all()) {
        state.first_moment.emplace_back(p.rows(), p.cols());
        state.second_moment.emplace_back(p.rows(), p.cols());
    }
    return state;
}

void adam_step(model::ModelParams& params, OptimizerState& state, const TrainConfig& cfg) {
    std::vector<nd::Array> arrays = params.all();
    if (arrays.size() != state.first_moment.size())
        throw UsageError("optimizer state does not match the parameter list");

    for (const nd::Array& p : arrays)
        if (!p.grad().all_finite())
            throw NumericError("non-finite gradient encountered in adam_step");

    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.step));

    for (std::size_t a = 0; a < arrays.size(); ++a) {
        Matrix& theta = arrays[a].mutable_values();
        Matrix& grad = arrays[a].mutable_grad();
        Matrix& m = state.first_moment[a];
        Matrix& v = state.second_moment[a];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double g = grad[i] + cfg.weight_decay * theta[i];
            m[i] = cfg.adam_beta1 * m[i] + (1.0 - cfg.adam_beta1) * g;
            v[i] = cfg.adam_beta2 * v[i] + (1.0 - cfg.adam_beta2) * g * g;
            theta[i] -= cfg.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.adam_eps);
        }
        grad.fill(0.0);
    }
}

TrainResult train(const data::DatasetManifest& manifest, const model::ModelConfig& model_cfg,
                  const TrainConfig& train_cfg, const CheckpointHook& hook) {
    model_cfg.validate();
    train_cfg.validate();
    const std::vector<data::TrainVideo> videos = data::training_view(manifest);
    if (videos.empty()) throw UsageError("training manifest contains no videos");
    if (train_cfg.batch_size > videos.size())
        throw ConfigError("batch_size exceeds the number of training videos");
    for (const data::TrainVideo& v : videos)
        if (v.labels.empty()) throw UsageError("training video " + v.id + " has no labels");

    // Features are small at desk scale; keep them resident.
    struct Loaded {
        Matrix rgb, flow;
        std::vector<std::uint8_t> y;
    };
    std::vector<Loaded> cache;
    cache.reserve(videos.size());
    for (const data::TrainVideo& v : videos) {
        Loaded item;
        item.rgb = data::read_features(v.rgb_path);
        item.flow = data::read_features(v.flow_path);
        if (item.rgb.cols() != model_cfg.feature_dim)
            throw ShapeError("feature width of " + v.id + " does not match model feature_dim");
        item.y.assign(manifest.classes.size(), 0);
        for (std::size_t label : v.labels) item.y[label] = 1;
        cache.push_back(std::move(item));
    }

    TrainResult result;
    result.params = model::init_params(model_cfg);
    result.optimizer = make_optimizer_state(result.params);
    result.ema = losses::EmaRef(model_cfg.embed_dim());

    Rng rng(train_cfg.seed);
    result.log.reserve(train_cfg.iterations);

    for (std::size_t iter = 1; iter <= train_cfg.iterations; ++iter) {
        const std::vector<std::size_t> batch_idx =
            data::sample_indices(videos.size(), train_cfg.batch_size, rng);

        std::vector<losses::VideoLossState> states;
        states.reserve(batch_idx.size());
        for (std::size_t idx : batch_idx) {
            model::ForwardOutput out =
                model::forward(result.params, model_cfg, cache[idx].rgb, cache[idx].flow);
            states.push_back(losses::make_video_state(out, cache[idx].y, result.ema.x_ref,
                                                      train_cfg.loss.tau));
        }
        const std::vector<std::size_t> pairing =
            losses::derangement_pairing(states.size(), rng);

        losses::LossBreakdown breakdown;
        nd::Array loss = losses::total_loss(states, pairing, train_cfg.loss, &breakdown);
        if (breakdown.video_term_skipped)
            std::fprintf(stderr, "warning: iteration %zu: video-level joint is zero, skipping L_DV\n",
                         iter);
        if (!std::isfinite(breakdown.total))
            throw NumericError("non-finite loss at iteration " + std::to_string(iter));
        nd::backward(loss);
        adam_step(result.params, result.optimizer, train_cfg);

        std::vector<Matrix> bg_values;
        bg_values.reserve(states.size());
        for (const losses::VideoLossState& s : states) bg_values.push_back(s.x_bg.values());
        losses::update_ema_ref(result.ema, bg_values);

        result.log.push_back(LogRow{iter, breakdown.discriminative, breakdown.denoising_snippet,
                                    breakdown.denoising_video, breakdown.total});
        result.iteration = iter;
        if (hook && train_cfg.checkpoint_every != 0 && iter % train_cfg.checkpoint_every == 0 &&
            iter != train_cfg.iterations)
            hook(result, iter);
    }
    if (hook) hook(result, result.iteration);
    return result;
}

void write_log_csv(const std::vector<LogRow>& log, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << "iteration,L_Dis,L_DS,L_DV,total\n";
    char buf[256];
    for (const LogRow& row : log) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g\n", row.iteration,
                      row.discriminative, row.denoising_snippet, row.denoising_video, row.total);
        os << buf;
    }
}

// --- checkpoint serialization ------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'D', '2', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    put_u32(os, static_cast<std::uint32_t>(v));
    put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

void put_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(os, bits);
}

std::uint32_t get_u32(std::istream& is, const std::string& what) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw FormatError("checkpoint truncated while reading " + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& is, const std::string& what) {
    const std::uint64_t lo = get_u32(is, what);
    const std::uint64_t hi = get_u32(is, what);
    return lo | (hi << 32);
}

double get_f64(std::istream& is, const std::string& what) {
    const std::uint64_t bits = get_u64(is, what);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

void put_matrix(std::ostream& os, const Matrix& m) {
    put_u32(os, static_cast<std::uint32_t>(m.rows()));
    put_u32(os, static_cast<std::uint32_t>(m.cols()));
    for (std::size_t i = 0; i < m.size(); ++i) put_f64(os, m[i]);
}

Matrix get_matrix(std::istream& is, const std::string& what) {
    const std::uint32_t rows = get_u32(is, what);
    const std::uint32_t cols = get_u32(is, what);
    if (rows == 0 || cols == 0) throw FormatError("checkpoint has empty array for " + what);
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = get_f64(is, what);
    return m;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os.write(kCheckpointMagic, 4);
    put_u32(os, kCheckpointVersion);
    put_u32(os, static_cast<std::uint32_t>(ckpt.model_cfg.feature_dim));
    put_u32(os, static_cast<std::uint32_t>(ckpt.model_cfg.num_classes));
    put_u32(os, static_cast<std::uint32_t>(ckpt.model_cfg.kernel_size));
    put_u32(os, static_cast<std::uint32_t>(ckpt.model_cfg.dilation));
    put_f64(os, ckpt.model_cfg.leaky_slope);
    put_u64(os, ckpt.model_cfg.seed);

    const std::vector<nd::Array> arrays = ckpt.params.all();
    put_u32(os, static_cast<std::uint32_t>(arrays.size()));
    for (const nd::Array& a : arrays) put_matrix(os, a.values());

    put_u64(os, ckpt.optimizer.step);
    for (const Matrix& m : ckpt.optimizer.first_moment) put_matrix(os, m);
    for (const Matrix& m : ckpt.optimizer.second_moment) put_matrix(os, m);

    put_u64(os, ckpt.ema.iteration);
    put_matrix(os, ckpt.ema.x_ref);
    put_u64(os, ckpt.iteration);
    if (!os) throw IoError("short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw FormatError(path.string() + ": bad magic at byte offset 0 (expected \"D2CK\")");
    const std::uint32_t version = get_u32(is, "version");
    if (version != kCheckpointVersion)
        throw FormatError(path.string() + ": unsupported version " + std::to_string(version) +
                          " at byte offset 4");

    Checkpoint ckpt;
    ckpt.model_cfg.feature_dim = get_u32(is, "feature_dim");
    ckpt.model_cfg.num_classes = get_u32(is, "num_classes");
    ckpt.model_cfg.kernel_size = get_u32(is, "kernel_size");
    ckpt.model_cfg.dilation = get_u32(is, "dilation");
    ckpt.model_cfg.leaky_slope = get_f64(is, "leaky_slope");
    ckpt.model_cfg.seed = get_u64(is, "seed");
    ckpt.model_cfg.validate();

    const std::uint32_t count = get_u32(is, "parameter count");
    if (count != 12)
        throw FormatError(path.string() + ": expected 12 parameter arrays, found " +
                          std::to_string(count));
    ckpt.params = model::init_params(ckpt.model_cfg);
    std::vector<nd::Array> arrays = ckpt.params.all();
    for (std::size_t i = 0; i < arrays.size(); ++i) {
        Matrix m = get_matrix(is, "parameter array " + std::to_string(i));
        if (!m.same_shape(arrays[i].values()))
            throw FormatError(path.string() + ": parameter array " + std::to_string(i) +
                              " has unexpected shape");
        arrays[i].mutable_values() = std::move(m);
        if (!arrays[i].values().all_finite())
            throw FormatError(path.string() + ": parameter array " + std::to_string(i) +
                              " has non-finite values");
    }

    ckpt.optimizer.step = get_u64(is, "optimizer step");
    for (std::size_t i = 0; i < arrays.size(); ++i)
        ckpt.optimizer.first_moment.push_back(get_matrix(is, "first moment"));
    for (std::size_t i = 0; i < arrays.size(); ++i)
        ckpt.optimizer.second_moment.push_back(get_matrix(is, "second moment"));

    ckpt.ema.iteration = get_u64(is, "ema iteration");
    ckpt.ema.x_ref = get_matrix(is, "ema reference");
    if (ckpt.ema.x_ref.rows() != 1 || ckpt.ema.x_ref.cols() != ckpt.model_cfg.embed_dim())
        throw FormatError(path.string() + ": ema reference has unexpected shape");
    ckpt.iteration = get_u64(is, "iteration");

    char extra;
    if (is.read(&extra, 1))
        throw FormatError(path.string() + ": trailing bytes after checkpoint payload");
    return ckpt;
}

}  // namespace d2loc::train
