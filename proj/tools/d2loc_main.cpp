#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "d2loc/config.hpp"
#include "d2loc/errors.hpp"
#include "d2loc/gradcheck.hpp"
#include "d2loc/pipeline.hpp"
#include "d2loc/study.hpp"

namespace {

using d2loc::config::RunConfig;

struct CommonArgs {
    std::optional<std::filesystem::path> config_path;
    std::vector<std::string> overrides;
};

void add_config_options(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON config file (sections model/train/loss/infer/synth)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--set", args.overrides,
                    "dotted-key override, e.g. --set train.lr=0.001 (repeatable)");
}

RunConfig resolve(const CommonArgs& args) {
    return d2loc::config::load_run_config(args.config_path, args.overrides);
}

int run_all(CLI::App& app, int argc, char** argv) {
    try {
        app.parse(argc, argv);
        return 0;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const d2loc::UsageError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"weakly-supervised temporal action localization toolkit"};
    app.require_subcommand(1);

    // --- synth ---------------------------------------------------------------
    auto synth_args = std::make_shared<CommonArgs>();
    auto synth_out = std::make_shared<std::filesystem::path>();
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    add_config_options(synth, *synth_args);
    synth->add_option("--out", *synth_out, "output directory")->required();
    synth->callback([=]() {
        const RunConfig cfg = resolve(*synth_args);
        const d2loc::data::SynthOutput out = d2loc::pipeline::run_synth(cfg, *synth_out);
        std::printf("manifest: %s\n", out.manifest_path.string().c_str());
        std::printf("train manifest: %s\n", out.train_manifest_path.string().c_str());
        std::printf("test manifest: %s\n", out.test_manifest_path.string().c_str());
        std::printf("videos: %zu (train %zu, test %zu), classes: %zu\n", out.full.videos.size(),
                    out.train.videos.size(), out.test.videos.size(), out.full.classes.size());
    });

    // --- train ---------------------------------------------------------------
    auto train_args = std::make_shared<CommonArgs>();
    auto train_manifest = std::make_shared<std::filesystem::path>();
    auto train_out = std::make_shared<std::filesystem::path>();
    CLI::App* train = app.add_subcommand("train", "train a model on a manifest");
    add_config_options(train, *train_args);
    train->add_option("--manifest", *train_manifest, "training manifest")->required()
        ->check(CLI::ExistingFile);
    train->add_option("--out", *train_out, "output directory")->required();
    train->callback([=]() {
        const RunConfig cfg = resolve(*train_args);
        const auto artifacts = d2loc::pipeline::run_train(cfg, *train_manifest, *train_out);
        const auto& log = artifacts.result.log;
        std::printf("checkpoint: %s\n", artifacts.checkpoint_path.string().c_str());
        std::printf("log: %s\n", artifacts.log_path.string().c_str());
        if (!log.empty())
            std::printf("final loss: %.6f (iteration %zu)\n", log.back().total, log.back().iteration);
    });

    // --- infer ---------------------------------------------------------------
    auto infer_args = std::make_shared<CommonArgs>();
    auto infer_ckpt = std::make_shared<std::filesystem::path>();
    auto infer_manifest_path = std::make_shared<std::filesystem::path>();
    auto infer_out = std::make_shared<std::filesystem::path>();
    CLI::App* infer = app.add_subcommand("infer", "run detection over a manifest");
    add_config_options(infer, *infer_args);
    infer->add_option("--checkpoint", *infer_ckpt, "checkpoint file")->required()
        ->check(CLI::ExistingFile);
    infer->add_option("--manifest", *infer_manifest_path, "manifest to run on")->required()
        ->check(CLI::ExistingFile);
    infer->add_option("--out", *infer_out, "output directory")->required();
    infer->callback([=]() {
        const RunConfig cfg = resolve(*infer_args);
        const auto artifacts =
            d2loc::pipeline::run_infer(cfg, *infer_ckpt, *infer_manifest_path, *infer_out);
        std::printf("detections: %s (%zu)\n", artifacts.detections_path.string().c_str(),
                    artifacts.detections.size());
    });

    // --- eval ----------------------------------------------------------------
    auto eval_dets = std::make_shared<std::filesystem::path>();
    auto eval_manifest = std::make_shared<std::filesystem::path>();
    auto eval_out = std::make_shared<std::filesystem::path>();
    auto eval_ious = std::make_shared<std::vector<double>>(std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5});
    CLI::App* evalc = app.add_subcommand("eval", "score detections against ground truth");
    evalc->add_option("--detections", *eval_dets, "detections JSON")->required()
        ->check(CLI::ExistingFile);
    evalc->add_option("--manifest", *eval_manifest, "manifest with ground truth")->required()
        ->check(CLI::ExistingFile);
    evalc->add_option("--ious", *eval_ious, "IoU thresholds");
    evalc->add_option("--out", *eval_out, "output directory")->required();
    evalc->callback([=]() {
        const d2loc::data::DatasetManifest manifest = d2loc::data::load_manifest(*eval_manifest);
        const d2loc::eval::EvalReport report =
            d2loc::pipeline::run_eval(*eval_dets, *eval_manifest, *eval_ious, *eval_out);
        std::fputs(d2loc::eval::report_table(report, manifest).c_str(), stdout);
    });

    // --- gradcheck -------------------------------------------------------------
    auto gc_seeds = std::make_shared<std::vector<std::uint64_t>>(std::vector<std::uint64_t>{1, 2, 3});
    auto gc_coords = std::make_shared<std::size_t>(20);
    auto gc_sabotage = std::make_shared<std::string>();
    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    gradcheck->add_option("--seeds", *gc_seeds, "seeds to run");
    gradcheck->add_option("--coords", *gc_coords, "coordinates per component");
    gradcheck->add_option("--sabotage", *gc_sabotage, "corrupt this component's analytic gradient (test hook)")
        ->group("");  // hidden
    gradcheck->callback([=]() {
        d2loc::gradcheck::GradCheckConfig cfg;
        cfg.seeds = *gc_seeds;
        cfg.coords_per_component = *gc_coords;
        cfg.sabotage = *gc_sabotage;
        bool all_pass = true;
        for (const auto& entry : d2loc::gradcheck::run_gradcheck(cfg)) {
            std::printf("%-22s max rel err %.3e (tol %.0e) %s\n", entry.component.c_str(),
                        entry.max_rel_err, entry.tolerance, entry.pass ? "PASS" : "FAIL");
            all_pass = all_pass && entry.pass;
        }
        if (!all_pass) throw d2loc::NumericError("gradient check failed");
    });

    // --- pdmi-study ------------------------------------------------------------
    auto study_samples = std::make_shared<std::size_t>(10000);
    auto study_seed = std::make_shared<std::uint64_t>(1);
    auto study_out = std::make_shared<std::filesystem::path>();
    auto study_plant = std::make_shared<bool>(false);
    CLI::App* studyc = app.add_subcommand("pdmi-study", "condition number vs determinant sampling study");
    studyc->add_option("--samples", *study_samples, "number of random joint matrices");
    studyc->add_option("--seed", *study_seed, "rng seed");
    studyc->add_option("--out", *study_out, "output CSV")->required();
    studyc->add_flag("--plant-identity", *study_plant, "append the identity optimum sample");
    studyc->callback([=]() {
        const d2loc::study::PdmiStudyResult result =
            d2loc::study::pdmi_study(*study_samples, *study_seed, *study_plant);
        d2loc::study::write_study_csv(result, *study_out);
        std::printf("samples: %zu\n", result.rows.size());
        std::printf("pearson(log eta, log |det|): %.4f\n", result.pearson);
    });

    // --- ablate ----------------------------------------------------------------
    auto ab_args = std::make_shared<CommonArgs>();
    auto ab_train = std::make_shared<std::filesystem::path>();
    auto ab_test = std::make_shared<std::filesystem::path>();
    auto ab_out = std::make_shared<std::filesystem::path>();
    auto ab_seeds = std::make_shared<std::vector<std::uint64_t>>(std::vector<std::uint64_t>{1, 2, 3});
    CLI::App* ablate = app.add_subcommand("ablate", "train the four-loss ladder and compare mAP@0.5");
    add_config_options(ablate, *ab_args);
    ablate->add_option("--train-manifest", *ab_train, "training manifest")->required()
        ->check(CLI::ExistingFile);
    ablate->add_option("--test-manifest", *ab_test, "evaluation manifest")->required()
        ->check(CLI::ExistingFile);
    ablate->add_option("--seeds", *ab_seeds, "seeds to average over");
    ablate->add_option("--out", *ab_out, "output directory")->required();
    ablate->callback([=]() {
        const RunConfig cfg = resolve(*ab_args);
        const auto result = d2loc::pipeline::run_ablate(cfg, *ab_train, *ab_test, *ab_seeds, *ab_out);
        std::printf("%-18s %12s\n", "loss", "mean mAP@0.5");
        for (const auto& row : result.rows)
            std::printf("%-18s %12.4f\n", row.name.c_str(), row.mean_map_at_05);
        std::printf("report: %s\n", result.report_path.string().c_str());
    });

    return run_all(app, argc, argv);
}
