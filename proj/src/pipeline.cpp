#include "d2loc/pipeline.hpp"

#include <atomic>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

#include "d2loc/errors.hpp"
#include "d2loc/losses.hpp"

namespace d2loc::pipeline {

namespace {

void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string());
}

}  // namespace

data::SynthOutput run_synth(const config::RunConfig& cfg, const std::filesystem::path& out_dir) {
    ensure_dir(out_dir);
    data::SynthOutput out = data::generate_synthetic(cfg.synth, out_dir);
    config::echo_config(cfg, out_dir);
    return out;
}

TrainArtifacts run_train(const config::RunConfig& cfg, const std::filesystem::path& manifest_path,
                         const std::filesystem::path& out_dir) {
    ensure_dir(out_dir);
    const data::DatasetManifest manifest = data::load_manifest(manifest_path);

    TrainArtifacts artifacts;
    artifacts.checkpoint_path = out_dir / "checkpoint.d2ck";
    artifacts.log_path = out_dir / "train_log.csv";

    const train::CheckpointHook hook = [&](const train::TrainResult& r, std::size_t iteration) {
        train::Checkpoint ckpt{cfg.model, r.params, r.optimizer, r.ema, iteration};
        if (iteration == r.iteration && iteration == cfg.train.iterations) {
            train::save_checkpoint(artifacts.checkpoint_path, ckpt);
        } else {
            char name[64];
            std::snprintf(name, sizeof(name), "checkpoint_%06zu.d2ck", iteration);
            train::save_checkpoint(out_dir / name, ckpt);
        }
    };

    artifacts.result = train::train(manifest, cfg.model, cfg.train, hook);
    train::write_log_csv(artifacts.result.log, artifacts.log_path);
    config::echo_config(cfg, out_dir);
    return artifacts;
}

std::vector<infer::Detection> infer_manifest(const train::Checkpoint& ckpt,
                                             const data::DatasetManifest& manifest,
                                             const infer::InferConfig& cfg, std::size_t threads) {
    cfg.validate();
    const std::size_t n = manifest.videos.size();
    std::vector<std::vector<infer::Detection>> per_video(n);
    if (threads == 0) threads = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    threads = std::min(threads, n == 0 ? std::size_t{1} : n);

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&]() {
        try {
            for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
                const data::VideoRecord& rec = manifest.videos[i];
                const Matrix rgb = data::read_features(manifest.resolve(rec.rgb_path));
                const Matrix flow = data::read_features(manifest.resolve(rec.flow_path));
                model::ForwardOutput out = model::forward(ckpt.params, ckpt.model_cfg, rgb, flow);
                const std::vector<double> lambda_prime =
                    losses::bottomup_attention(out.embeddings.values(), ckpt.ema.x_ref);
                const std::vector<double> p = infer::video_prediction_values(out.tcam.values());
                per_video[i] =
                    infer::detect(out.tcam.values(), lambda_prime, p, rec, manifest.snippet_frames, cfg);
            }
        } catch (...) {
            std::lock_guard<std::mutex> lock(failure_mutex);
            if (!failure) failure = std::current_exception();
        }
    };

    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);

    std::vector<infer::Detection> all;
    for (std::vector<infer::Detection>& dets : per_video)
        all.insert(all.end(), dets.begin(), dets.end());
    return all;
}

InferArtifacts run_infer(const config::RunConfig& cfg, const std::filesystem::path& checkpoint_path,
                         const std::filesystem::path& manifest_path,
                         const std::filesystem::path& out_dir) {
    ensure_dir(out_dir);
    const train::Checkpoint ckpt = train::load_checkpoint(checkpoint_path);
    const data::DatasetManifest manifest = data::load_manifest(manifest_path);

    InferArtifacts artifacts;
    artifacts.detections = infer_manifest(ckpt, manifest, cfg.infer);
    artifacts.detections_path = out_dir / "detections.json";
    infer::save_detections(artifacts.detections, artifacts.detections_path);
    config::echo_config(cfg, out_dir);
    return artifacts;
}

eval::EvalReport run_eval(const std::filesystem::path& detections_path,
                          const std::filesystem::path& manifest_path,
                          const std::vector<double>& ious, const std::filesystem::path& out_dir) {
    ensure_dir(out_dir);
    const data::DatasetManifest manifest = data::load_manifest(manifest_path);
    const std::vector<infer::Detection> detections = infer::load_detections(detections_path);
    eval::EvalReport report = eval::evaluate(detections, manifest, ious);
    eval::save_report(report, manifest, out_dir / "report.json", out_dir / "report.txt");
    return report;
}

AblateResult run_ablate(const config::RunConfig& base_cfg,
                        const std::filesystem::path& train_manifest_path,
                        const std::filesystem::path& test_manifest_path,
                        const std::vector<std::uint64_t>& seeds,
                        const std::filesystem::path& out_dir) {
    ensure_dir(out_dir);
    const data::DatasetManifest train_manifest = data::load_manifest(train_manifest_path);
    const data::DatasetManifest test_manifest = data::load_manifest(test_manifest_path);

    struct Variant {
        std::string name;
        losses::ClassificationVariant classification;
        losses::DenoisingVariant denoising;
    };
    const std::vector<Variant> variants = {
        {"cross_entropy", losses::ClassificationVariant::cross_entropy, losses::DenoisingVariant::none},
        {"focal", losses::ClassificationVariant::focal, losses::DenoisingVariant::none},
        {"discriminative", losses::ClassificationVariant::discriminative, losses::DenoisingVariant::none},
        {"full", losses::ClassificationVariant::discriminative, losses::DenoisingVariant::pdmi},
    };

    AblateResult result;
    for (const Variant& variant : variants) {
        AblateRow row;
        row.name = variant.name;
        double f1_sum = 0.0;
        for (std::uint64_t seed : seeds) {
            config::RunConfig cfg = base_cfg;
            cfg.train.loss.classification_variant = variant.classification;
            cfg.train.loss.denoising_variant = variant.denoising;
            cfg.train.seed = seed;
            cfg.model.seed = seed;

            train::TrainResult trained = train::train(train_manifest, cfg.model, cfg.train);
            const train::Checkpoint ckpt{cfg.model, trained.params, trained.optimizer, trained.ema,
                                         trained.iteration};
            const std::vector<infer::Detection> dets =
                infer_manifest(ckpt, test_manifest, cfg.infer);
            const eval::EvalReport report = eval::evaluate(dets, test_manifest, {0.5});
            row.map_at_05.push_back(report.per_iou_map.at(0.5));
            f1_sum += report.f1_at_05;
        }
        for (double v : row.map_at_05) row.mean_map_at_05 += v;
        row.mean_map_at_05 /= static_cast<double>(row.map_at_05.size());
        row.mean_f1_at_05 = f1_sum / static_cast<double>(seeds.size());
        result.rows.push_back(std::move(row));
    }

    nlohmann::ordered_json j;
    j["seeds"] = seeds;
    j["rows"] = nlohmann::ordered_json::array();
    for (const AblateRow& row : result.rows)
        j["rows"].push_back({{"loss", row.name},
                             {"map_at_0.5_per_seed", row.map_at_05},
                             {"mean_map_at_0.5", row.mean_map_at_05},
                             {"mean_f1_at_0.5", row.mean_f1_at_05}});
    result.report_path = out_dir / "ablation_report.json";
    std::ofstream os(result.report_path, std::ios::trunc);
    if (!os) throw IoError("cannot open " + result.report_path.string() + " for writing");
    os << j.dump(2) << "\n";

    std::ofstream ts(out_dir / "ablation_report.txt", std::ios::trunc);
    ts << "loss               mean mAP@0.5   mean F1@0.5\n";
    char buf[128];
    for (const AblateRow& row : result.rows) {
        std::snprintf(buf, sizeof(buf), "%-18s %12.4f %12.4f\n", row.name.c_str(),
                      row.mean_map_at_05, row.mean_f1_at_05);
        ts << buf;
    }
    return result;
}

}  // namespace d2loc::pipeline
