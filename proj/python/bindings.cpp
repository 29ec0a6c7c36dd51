#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "d2loc/config.hpp"
#include "d2loc/data.hpp"
#include "d2loc/eval.hpp"
#include "d2loc/gradcheck.hpp"
#include "d2loc/infer.hpp"
#include "d2loc/losses.hpp"
#include "d2loc/model.hpp"
#include "d2loc/pipeline.hpp"
#include "d2loc/study.hpp"
#include "d2loc/svd.hpp"
#include "d2loc/train.hpp"

namespace py = pybind11;
using namespace d2loc;

namespace {

Matrix matrix_from(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 2) throw UsageError("expected a 2-D array");
    Matrix m(static_cast<std::size_t>(arr.shape(0)), static_cast<std::size_t>(arr.shape(1)));
    std::memcpy(m.data(), arr.data(), sizeof(double) * m.size());
    return m;
}

py::array_t<double> matrix_to(const Matrix& m) {
    py::array_t<double> out({m.rows(), m.cols()});
    std::memcpy(out.mutable_data(), m.data(), sizeof(double) * m.size());
    return out;
}

config::RunConfig config_from_json_string(const std::string& text) {
    if (text.empty()) return config::desk_defaults();
    return config::from_json(nlohmann::json::parse(text));
}

py::dict report_to_dict(const eval::EvalReport& report, const data::DatasetManifest& manifest) {
    py::dict out;
    py::dict per_iou;
    for (const auto& [iou, v] : report.per_iou_map) per_iou[py::float_(iou)] = v;
    out["map"] = per_iou;
    py::dict per_class;
    for (const auto& [c, m] : report.per_class_ap) {
        py::dict d;
        for (const auto& [iou, v] : m) d[py::float_(iou)] = v;
        per_class[py::str(manifest.classes[c])] = d;
    }
    out["per_class_ap"] = per_class;
    out["avg_map"] = report.avg_map;
    out["f1_at_0.5"] = report.f1_at_05;
    out["tp"] = report.tp;
    out["fp"] = report.fp;
    out["fn"] = report.fn;
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "weakly-supervised temporal action localization toolkit";

    py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);

    // --- numerics -----------------------------------------------------------
    m.def(
        "svd",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a, double rank_tol) {
            const nd::SvdResult r = nd::svd_small(matrix_from(a), rank_tol);
            return py::make_tuple(py::cast(r.singular_values), matrix_to(r.left_vectors),
                                  matrix_to(r.right_vectors), r.numerical_rank);
        },
        py::arg("a"), py::arg("rank_tol") = 1e-9,
        "One-sided Jacobi SVD: returns (singular_values, U, V, numerical_rank)");

    m.def(
        "log_condition_number",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a, double rank_tol) {
            return nd::log_condition_number(nd::Array::leaf(matrix_from(a), false), rank_tol).item();
        },
        py::arg("a"), py::arg("rank_tol") = 1e-9);

    m.def(
        "abs_det",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
            return nd::abs_det(matrix_from(a));
        },
        py::arg("a"));

    // --- pipeline -------------------------------------------------------------
    m.def(
        "generate_synthetic",
        [](const std::string& config_json, const std::filesystem::path& out_dir) {
            const data::SynthOutput out =
                pipeline::run_synth(config_from_json_string(config_json), out_dir);
            py::dict d;
            d["manifest"] = out.manifest_path;
            d["train_manifest"] = out.train_manifest_path;
            d["test_manifest"] = out.test_manifest_path;
            d["prototypes"] = out.prototypes_path;
            d["num_videos"] = out.full.videos.size();
            d["num_classes"] = out.full.classes.size();
            return d;
        },
        py::arg("config_json") = "", py::arg("out_dir"));

    m.def(
        "train",
        [](const std::string& config_json, const std::filesystem::path& manifest,
           const std::filesystem::path& out_dir) {
            const pipeline::TrainArtifacts artifacts =
                pipeline::run_train(config_from_json_string(config_json), manifest, out_dir);
            py::dict d;
            d["checkpoint"] = artifacts.checkpoint_path;
            d["log"] = artifacts.log_path;
            d["final_loss"] = artifacts.result.log.empty() ? 0.0 : artifacts.result.log.back().total;
            d["iterations"] = artifacts.result.iteration;
            return d;
        },
        py::arg("config_json") = "", py::arg("manifest"), py::arg("out_dir"));

    m.def(
        "infer",
        [](const std::string& config_json, const std::filesystem::path& checkpoint,
           const std::filesystem::path& manifest, const std::filesystem::path& out_dir) {
            const pipeline::InferArtifacts artifacts = pipeline::run_infer(
                config_from_json_string(config_json), checkpoint, manifest, out_dir);
            py::list dets;
            for (const infer::Detection& det : artifacts.detections) {
                py::dict d;
                d["video_id"] = det.video_id;
                d["class_id"] = det.class_id;
                d["start_sec"] = det.start_sec;
                d["end_sec"] = det.end_sec;
                d["score"] = det.score;
                dets.append(d);
            }
            py::dict out;
            out["detections_path"] = artifacts.detections_path;
            out["detections"] = dets;
            return out;
        },
        py::arg("config_json") = "", py::arg("checkpoint"), py::arg("manifest"), py::arg("out_dir"));

    m.def(
        "evaluate",
        [](const std::filesystem::path& detections, const std::filesystem::path& manifest,
           const std::vector<double>& ious, const std::filesystem::path& out_dir) {
            const data::DatasetManifest mf = data::load_manifest(manifest);
            const eval::EvalReport report = pipeline::run_eval(detections, manifest, ious, out_dir);
            return report_to_dict(report, mf);
        },
        py::arg("detections"), py::arg("manifest"),
        py::arg("ious") = std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5}, py::arg("out_dir"));

    m.def(
        "forward",
        [](const std::filesystem::path& checkpoint,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& rgb,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& flow) {
            const train::Checkpoint ckpt = train::load_checkpoint(checkpoint);
            const model::ForwardOutput out =
                model::forward(ckpt.params, ckpt.model_cfg, matrix_from(rgb), matrix_from(flow));
            const std::vector<double> lambda_prime =
                losses::bottomup_attention(out.embeddings.values(), ckpt.ema.x_ref);
            const std::vector<double> p = infer::video_prediction_values(out.tcam.values());
            return py::make_tuple(matrix_to(out.embeddings.values()), matrix_to(out.tcam.values()),
                                  py::cast(lambda_prime), py::cast(p));
        },
        py::arg("checkpoint"), py::arg("rgb"), py::arg("flow"),
        "Run the two-stream model: returns (embeddings, tcam, lambda_prime, video_prediction)");

    m.def(
        "gradcheck",
        [](const std::vector<std::uint64_t>& seeds, std::size_t coords) {
            gradcheck::GradCheckConfig cfg;
            if (!seeds.empty()) cfg.seeds = seeds;
            cfg.coords_per_component = coords;
            py::list out;
            for (const gradcheck::GradCheckEntry& e : gradcheck::run_gradcheck(cfg)) {
                py::dict d;
                d["component"] = e.component;
                d["max_rel_err"] = e.max_rel_err;
                d["tolerance"] = e.tolerance;
                d["pass"] = e.pass;
                out.append(d);
            }
            return out;
        },
        py::arg("seeds") = std::vector<std::uint64_t>{}, py::arg("coords") = 20);

    m.def(
        "pdmi_study",
        [](std::size_t samples, std::uint64_t seed) {
            const study::PdmiStudyResult r = study::pdmi_study(samples, seed, false);
            py::array_t<double> rows({r.rows.size(), std::size_t{2}});
            for (std::size_t i = 0; i < r.rows.size(); ++i) {
                rows.mutable_at(i, 0) = r.rows[i].log_eta;
                rows.mutable_at(i, 1) = r.rows[i].log_abs_det;
            }
            return py::make_tuple(r.pearson, rows);
        },
        py::arg("samples") = 10000, py::arg("seed") = 1);

    m.def("ablate",
          [](const std::string& config_json, const std::filesystem::path& train_manifest,
             const std::filesystem::path& test_manifest, const std::vector<std::uint64_t>& seeds,
             const std::filesystem::path& out_dir) {
              const pipeline::AblateResult result = pipeline::run_ablate(
                  config_from_json_string(config_json), train_manifest, test_manifest, seeds, out_dir);
              py::dict d;
              for (const pipeline::AblateRow& row : result.rows)
                  d[py::str(row.name)] = row.mean_map_at_05;
              return d;
          },
          py::arg("config_json") = "", py::arg("train_manifest"), py::arg("test_manifest"),
          py::arg("seeds") = std::vector<std::uint64_t>{1, 2, 3}, py::arg("out_dir"));
}
