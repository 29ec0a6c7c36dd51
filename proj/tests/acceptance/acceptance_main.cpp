// Acceptance suite: runs every top-level criterion at its stated tolerance and
// prints one PASS/FAIL line each. Exit code 0 only if all hard criteria pass.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "d2loc/config.hpp"
#include "d2loc/data.hpp"
#include "d2loc/eval.hpp"
#include "d2loc/gradcheck.hpp"
#include "d2loc/infer.hpp"
#include "d2loc/losses.hpp"
#include "d2loc/model.hpp"
#include "d2loc/pipeline.hpp"
#include "d2loc/rng.hpp"
#include "d2loc/study.hpp"
#include "d2loc/svd.hpp"
#include "d2loc/train.hpp"
#include "oracles.hpp"

using namespace d2loc;

namespace {

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
    std::printf("[%s] %-28s %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    if (!pass) ++failures;
}

void report_soft(const std::string& name, bool pass, const std::string& detail) {
    std::printf("[%s] %-28s %s\n", pass ? "PASS" : "DEVIATION", name.c_str(), detail.c_str());
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Matrix m(r, c);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(lo, hi);
    return m;
}

// --- criterion: gradient suite ----------------------------------------------

void criterion_gradients() {
    const auto t0 = std::chrono::steady_clock::now();
    gradcheck::GradCheckConfig cfg;  // 3 seeds, 20 coordinates, step 1e-5
    const std::vector<gradcheck::GradCheckEntry> entries = gradcheck::run_gradcheck(cfg);
    bool pass = true;
    double worst = 0.0;
    std::string worst_name;
    for (const auto& e : entries) {
        pass = pass && e.pass;
        if (e.max_rel_err > worst) {
            worst = e.max_rel_err;
            worst_name = e.component;
        }
    }
    const double elapsed = seconds_since(t0);
    pass = pass && elapsed < 60.0;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%zu components, worst %.2e (%s), %.1fs", entries.size(),
                  worst, worst_name.c_str(), elapsed);
    report("gradient suite", pass, buf);
}

// --- criterion: pdmi optimum and the eta/det trend ---------------------------

void criterion_pdmi_trend() {
    const auto t0 = std::chrono::steady_clock::now();
    bool exact = true;
    for (double c : {0.5, 1.0, 3.0}) {
        Matrix m = Matrix::identity(2);
        for (std::size_t i = 0; i < m.size(); ++i) m[i] *= c;
        exact = exact && nd::log_condition_number(nd::Array::leaf(m, false)).item() == 0.0;
        Matrix m4 = Matrix::identity(4);
        for (std::size_t i = 0; i < m4.size(); ++i) m4[i] *= c;
        exact = exact && nd::log_condition_number(nd::Array::leaf(m4, false)).item() == 0.0;
    }
    const study::PdmiStudyResult trend = study::pdmi_study(10000, 1, false);
    const double elapsed = seconds_since(t0);
    const bool pass = exact && trend.pearson <= -0.5 && elapsed < 30.0;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "log cond(c*I)=0 exact: %s, pearson %.3f (<= -0.5), %.1fs",
                  exact ? "yes" : "no", trend.pearson, elapsed);
    report("pdmi optimum + trend", pass, buf);
}

// --- criterion: loss reduction chain -----------------------------------------

void criterion_reduction_chain() {
    Rng rng(71);
    double worst_focal = 0.0, worst_ce = 0.0;
    for (int it = 0; it < 100; ++it) {
        const std::size_t c = 2 + rng.uniform_index(5);
        const std::size_t batch_size = 2 + rng.uniform_index(4);
        std::vector<losses::VideoLossState> batch;
        for (std::size_t v = 0; v < batch_size; ++v) {
            losses::VideoLossState st;
            st.p = nd::Array::leaf(random_matrix(1, c, rng, 0.02, 0.98), false);
            std::vector<std::uint8_t> y(c);
            for (auto& b : y) b = rng.uniform() < 0.5;
            y[rng.uniform_index(c)] = 1;
            st.y = y;
            // orthogonal basis embeddings zero out every w term
            Matrix fg(1, 2 * batch_size), bg(1, 2 * batch_size);
            fg(0, v) = 1.0;
            bg(0, batch_size + v) = 1.0;
            st.x_fg = nd::Array::leaf(fg, false);
            st.x_bg = nd::Array::leaf(bg, false);
            batch.push_back(std::move(st));
        }
        std::vector<std::size_t> pairing(batch_size);
        for (std::size_t i = 0; i < batch_size; ++i) pairing[i] = (i + 1) % batch_size;

        losses::LossConfig disc;
        disc.gamma = 0.0;
        losses::LossConfig focal = disc;
        focal.classification_variant = losses::ClassificationVariant::focal;
        worst_focal = std::max(worst_focal,
                               std::abs(losses::discriminative_loss(batch, pairing, disc).item() -
                                        losses::discriminative_loss(batch, pairing, focal).item()));

        losses::LossConfig focal0 = focal;
        focal0.beta = 0.0;
        losses::LossConfig ce = focal;
        ce.classification_variant = losses::ClassificationVariant::cross_entropy;
        worst_ce = std::max(worst_ce,
                            std::abs(losses::discriminative_loss(batch, pairing, focal0).item() -
                                     losses::discriminative_loss(batch, pairing, ce).item()));
    }
    const bool pass = worst_focal < 1e-12 && worst_ce < 1e-12;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "disc(gamma=0,w=0)==focal to %.1e, focal(beta=0)==ce to %.1e",
                  worst_focal, worst_ce);
    report("loss reduction chain", pass, buf);
}

// --- criterion: svd correctness ----------------------------------------------

void criterion_svd() {
    Rng rng(73);
    double worst_recon = 0.0, worst_gram = 0.0;
    for (int it = 0; it < 1000; ++it) {
        const std::size_t m = 1 + rng.uniform_index(20);
        const std::size_t n = 1 + rng.uniform_index(20);
        Matrix a = random_matrix(m, n, rng);
        if (it % 7 == 0) {  // exercise rank deficiency
            for (std::size_t j = 0; j < n; ++j) a(0, j) = 2.0 * a(m - 1, j);
        }
        const nd::SvdResult svd = nd::svd_small(a);

        Matrix recon(m, n);
        for (std::size_t k = 0; k < svd.singular_values.size(); ++k)
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    recon(i, j) += svd.singular_values[k] * svd.left_vectors(i, k) *
                                   svd.right_vectors(j, k);
        recon.add_scaled(a, -1.0);
        worst_recon = std::max(worst_recon,
                               recon.frobenius_norm() / std::max(1.0, a.frobenius_norm()));

        const Matrix gram = matmul_values(a.transposed(), a);
        const std::vector<double> eig = oracles::symmetric_eigenvalues(gram);
        for (std::size_t i = 0; i < svd.singular_values.size(); ++i) {
            const double s2 = svd.singular_values[i] * svd.singular_values[i];
            const double denom = std::max(std::abs(eig[0]), 1e-12);
            worst_gram = std::max(worst_gram, std::abs(s2 - std::max(0.0, eig[i])) / denom);
        }
    }
    const bool pass = worst_recon <= 1e-10 && worst_gram < 1e-9;
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "1000 matrices <=20x20: recon %.1e (<=1e-10), gram-eig %.1e (<1e-9)", worst_recon,
                  worst_gram);
    report("svd correctness", pass, buf);
}

// --- criterion: evaluation oracle ---------------------------------------------

struct Fixture {
    std::string name;
    data::DatasetManifest manifest;
    std::vector<infer::Detection> dets;
    double want_map05;
    double want_f1;
};

data::VideoRecord fixture_video(const std::string& id,
                                std::vector<std::tuple<std::size_t, double, double>> gts) {
    data::VideoRecord v;
    v.id = id;
    v.fps = 25.0;
    v.num_snippets = 50;
    for (auto [c, s, e] : gts) {
        v.gt_segments.push_back(data::GtSegment{c, s, e});
        if (std::find(v.labels.begin(), v.labels.end(), c) == v.labels.end()) v.labels.push_back(c);
    }
    if (v.labels.empty()) v.labels.push_back(0);
    return v;
}

void criterion_eval_oracle() {
    std::vector<Fixture> fixtures;
    auto manifest1 = [](std::vector<std::tuple<std::size_t, double, double>> gts) {
        data::DatasetManifest m;
        m.classes = {"a", "b"};
        m.videos = {fixture_video("v1", std::move(gts))};
        return m;
    };
    auto D = [](const char* vid, std::size_t c, double s, double e, double score) {
        return infer::Detection{vid, c, s, e, score};
    };

    // 1: one perfect detection
    fixtures.push_back({"perfect", manifest1({{0, 0, 2}}), {D("v1", 0, 0, 2, 0.9)}, 1.0, 1.0});
    // 2: one disjoint false positive
    fixtures.push_back({"all-fp", manifest1({{0, 0, 2}}), {D("v1", 0, 10, 12, 0.9)}, 0.0, 0.0});
    // 3: TP, FP, TP by score: AP = 5/6, F1 = 2*2/(4+1+0)
    fixtures.push_back({"tp-fp-tp", manifest1({{0, 0, 2}, {0, 5, 7}}),
                        {D("v1", 0, 0, 2, 0.9), D("v1", 0, 10, 12, 0.8), D("v1", 0, 5, 7, 0.7)},
                        5.0 / 6.0, 4.0 / 5.0});
    // 4: duplicate of one gt: AP = 1 (recall saturates first), F1 = 2/3
    fixtures.push_back({"duplicate", manifest1({{0, 0, 2}}),
                        {D("v1", 0, 0, 2, 0.9), D("v1", 0, 0, 2, 0.8)}, 1.0, 2.0 / 3.0});
    // 5: two classes, one missed entirely: mAP = 1/2, F1 = 2/3
    {
        data::DatasetManifest m;
        m.classes = {"a", "b"};
        m.videos = {fixture_video("v1", {{0, 0, 2}, {1, 5, 7}})};
        fixtures.push_back({"missed-class", m, {D("v1", 0, 0, 2, 0.9)}, 0.5, 2.0 / 3.0});
    }
    // 6: high-scored FP above the TP: AP = 1/2, F1 = 1/2
    fixtures.push_back({"fp-first", manifest1({{0, 0, 2}}),
                        {D("v1", 0, 10, 12, 0.9), D("v1", 0, 0, 2, 0.8)}, 0.5, 0.5});
    // 7: tIoU exactly 0.5 counts: gt (0,3) vs det (1.5,4.5) -> inter 1.5 union 4.5... use (0,4),(2,6): 2/6
    //    exact 0.5 needs inter/union = 1/2: gt (0,3), det (1,4): inter 2, union 4
    fixtures.push_back({"iou-boundary", manifest1({{0, 0, 3}}), {D("v1", 0, 1, 4, 0.9)}, 1.0, 1.0});
    // 8: right span, wrong video: FP + FN
    {
        data::DatasetManifest m;
        m.classes = {"a"};
        m.videos = {fixture_video("v1", {{0, 0, 2}}), fixture_video("v2", {})};
        m.videos[1].labels = {0};
        fixtures.push_back({"wrong-video", m, {D("v2", 0, 0, 2, 0.9)}, 0.0, 0.0});
    }
    // 9: greedy score order: looser-overlap but higher-score detection takes the gt
    fixtures.push_back({"greedy-order", manifest1({{0, 0, 4}}),
                        {D("v1", 0, 1, 5, 0.9), D("v1", 0, 0, 4, 0.8)}, 1.0, 2.0 / 3.0});
    // 10: one of two gts found: AP = 1/2, F1 = 2/3
    fixtures.push_back({"half-recall", manifest1({{0, 0, 2}, {0, 5, 7}}),
                        {D("v1", 0, 5, 7, 0.9)}, 0.5, 2.0 / 3.0});

    bool pass = true;
    std::string detail;
    for (const Fixture& f : fixtures) {
        const eval::EvalReport report = eval::evaluate(f.dets, f.manifest, {0.5});
        const bool ok = std::abs(report.per_iou_map.at(0.5) - f.want_map05) < 1e-12 &&
                        std::abs(report.f1_at_05 - f.want_f1) < 1e-12;
        if (!ok) {
            pass = false;
            char buf[160];
            std::snprintf(buf, sizeof(buf), "%s: got mAP %.6f want %.6f, F1 %.6f want %.6f; ",
                          f.name.c_str(), report.per_iou_map.at(0.5), f.want_map05,
                          report.f1_at_05, f.want_f1);
            detail += buf;
        }
    }

    // monotonicity on random detection sets
    Rng rng(79);
    for (int it = 0; it < 20 && pass; ++it) {
        data::DatasetManifest m;
        m.classes = {"a", "b"};
        m.videos = {fixture_video("v1", {{0, 0, 4}, {1, 8, 12}}),
                    fixture_video("v2", {{0, 3, 7}})};
        std::vector<infer::Detection> dets;
        for (int d = 0; d < 10; ++d) {
            const double start = rng.uniform(0.0, 12.0);
            dets.push_back(infer::Detection{rng.uniform() < 0.5 ? "v1" : "v2",
                                            rng.uniform_index(2), start,
                                            start + rng.uniform(1.0, 6.0), rng.uniform(0.0, 1.0)});
        }
        const eval::EvalReport report = eval::evaluate(dets, m, {0.1, 0.3, 0.5, 0.7, 0.9});
        double prev = 2.0;
        for (double iou : report.ious) {
            if (report.per_iou_map.at(iou) > prev + 1e-12) pass = false;
            prev = report.per_iou_map.at(iou);
        }
    }
    if (pass) detail = "10 hand fixtures exact, mAP monotone in IoU";
    report("evaluation oracle", pass, detail);
}

// --- criterion: inference determinism and NMS properties -----------------------

void criterion_inference() {
    Rng rng(83);
    bool nms_ok = true;
    for (int it = 0; it < 1000; ++it) {
        std::vector<infer::Proposal> props;
        const std::size_t n = 2 + rng.uniform_index(14);
        for (std::size_t i = 0; i < n; ++i) {
            infer::Proposal p;
            p.class_id = 0;
            p.start_snippet = rng.uniform_index(40);
            p.end_snippet = p.start_snippet + rng.uniform_index(12);
            p.score = rng.uniform(-0.5, 1.0);
            props.push_back(p);
        }
        const std::vector<infer::Proposal> once = infer::nms(props, 0.5);
        const std::vector<infer::Proposal> twice = infer::nms(once, 0.5);
        if (once.size() != twice.size()) nms_ok = false;
        for (std::size_t i = 0; i < once.size() && nms_ok; ++i)
            if (once[i].start_snippet != twice[i].start_snippet ||
                once[i].end_snippet != twice[i].end_snippet || once[i].score != twice[i].score)
                nms_ok = false;
        for (std::size_t i = 0; i < once.size(); ++i)
            for (std::size_t j = i + 1; j < once.size(); ++j)
                if (infer::snippet_tiou(once[i].start_snippet, once[i].end_snippet,
                                        once[j].start_snippet, once[j].end_snippet) > 0.5)
                    nms_ok = false;
        if (!nms_ok) break;
    }

    bool det_ok = true;
    infer::InferConfig cfg;
    for (int it = 0; it < 50; ++it) {
        const std::size_t s = 10 + rng.uniform_index(50);
        Matrix tcam(s, 4);
        for (std::size_t i = 0; i < tcam.size(); ++i) tcam[i] = rng.uniform(0.01, 0.99);
        std::vector<double> lp(s);
        for (double& v : lp) v = rng.uniform(0.0, 1.0);
        data::VideoRecord rec;
        rec.id = "v";
        rec.fps = 25.0;
        rec.num_snippets = s;
        const std::vector<double> p = infer::video_prediction_values(tcam);
        const auto a = infer::detect(tcam, lp, p, rec, 16, cfg);
        const auto b = infer::detect(tcam, lp, p, rec, 16, cfg);
        if (a.size() != b.size()) det_ok = false;
        for (std::size_t i = 0; i < a.size() && det_ok; ++i)
            if (a[i].start_sec != b[i].start_sec || a[i].end_sec != b[i].end_sec ||
                a[i].score != b[i].score || a[i].class_id != b[i].class_id)
                det_ok = false;
    }
    report("inference determinism + nms", nms_ok && det_ok,
           nms_ok ? (det_ok ? "1000 nms sets idempotent/disjoint, detect bit-deterministic"
                            : "detect not deterministic")
                  : "nms property violated");
}

// --- criterion: end-to-end ablation trend --------------------------------------

struct LadderPoint {
    std::string name;
    double mean = 0.0;
    std::vector<double> per_seed;
};

double train_eval_map05(const data::DatasetManifest& train_manifest,
                        const data::DatasetManifest& test_manifest, const config::RunConfig& base,
                        losses::ClassificationVariant cls, losses::DenoisingVariant den,
                        std::uint64_t seed) {
    config::RunConfig cfg = base;
    cfg.train.loss.classification_variant = cls;
    cfg.train.loss.denoising_variant = den;
    cfg.train.seed = seed;
    cfg.model.seed = seed;
    const train::TrainResult r = train::train(train_manifest, cfg.model, cfg.train);
    const train::Checkpoint ckpt{cfg.model, r.params, r.optimizer, r.ema, r.iteration};
    const std::vector<infer::Detection> dets =
        pipeline::infer_manifest(ckpt, test_manifest, cfg.infer);
    return eval::evaluate(dets, test_manifest, {0.5}).per_iou_map.at(0.5);
}

void criterion_ablation(const data::DatasetManifest& train_manifest,
                        const data::DatasetManifest& test_manifest) {
    const auto t0 = std::chrono::steady_clock::now();
    const config::RunConfig base = config::desk_defaults();  // 2000 iterations, desk profile
    const std::vector<std::uint64_t> seeds = {1, 2, 3};

    std::vector<LadderPoint> ladder = {
        {"ce", 0.0, {}}, {"focal", 0.0, {}}, {"l_dis", 0.0, {}}, {"full", 0.0, {}}};
    const losses::ClassificationVariant cls[] = {
        losses::ClassificationVariant::cross_entropy, losses::ClassificationVariant::focal,
        losses::ClassificationVariant::discriminative, losses::ClassificationVariant::discriminative};
    const losses::DenoisingVariant den[] = {losses::DenoisingVariant::none,
                                            losses::DenoisingVariant::none,
                                            losses::DenoisingVariant::none,
                                            losses::DenoisingVariant::pdmi};
    for (std::size_t i = 0; i < ladder.size(); ++i) {
        for (std::uint64_t seed : seeds)
            ladder[i].per_seed.push_back(
                train_eval_map05(train_manifest, test_manifest, base, cls[i], den[i], seed));
        for (double v : ladder[i].per_seed) ladder[i].mean += v;
        ladder[i].mean /= static_cast<double>(ladder[i].per_seed.size());
    }
    const double elapsed = seconds_since(t0);

    const bool ordered = ladder[0].mean <= ladder[1].mean && ladder[1].mean <= ladder[2].mean &&
                         ladder[2].mean <= ladder[3].mean;
    const bool margin = ladder[3].mean >= ladder[1].mean + 0.02;
    // Floor calibrated once against the nearest-prototype oracle run on the
    // default synthetic config (oracle mAP@0.5 = 1.0 at sigma 0; the trained
    // full model is required to reach at least half of the perfect score).
    const bool floor = ladder[3].mean >= 0.5;
    const bool timing = elapsed < 900.0;
    char buf[240];
    std::snprintf(buf, sizeof(buf),
                  "ce %.3f <= focal %.3f <= l_dis %.3f <= full %.3f, margin %.3f (>=0.02), "
                  "floor %.3f (>=0.5), %.0fs (<900)",
                  ladder[0].mean, ladder[1].mean, ladder[2].mean, ladder[3].mean,
                  ladder[3].mean - ladder[1].mean, ladder[3].mean, elapsed);
    report("end-to-end ablation trend", ordered && margin && floor && timing, buf);

    // soft criterion: pdmi denoising vs l1/bce stand-ins on identical seeds
    double l1_mean = 0.0, bce_mean = 0.0;
    for (std::uint64_t seed : seeds) {
        l1_mean += train_eval_map05(train_manifest, test_manifest, base,
                                    losses::ClassificationVariant::discriminative,
                                    losses::DenoisingVariant::l1, seed);
        bce_mean += train_eval_map05(train_manifest, test_manifest, base,
                                     losses::ClassificationVariant::discriminative,
                                     losses::DenoisingVariant::bce, seed);
    }
    l1_mean /= 3.0;
    bce_mean /= 3.0;
    const bool variant_ok = ladder[3].mean >= l1_mean && ladder[3].mean >= bce_mean;
    std::snprintf(buf, sizeof(buf), "pdmi %.3f vs l1 %.3f, bce %.3f", ladder[3].mean, l1_mean,
                  bce_mean);
    report_soft("denoising variant sanity", variant_ok, buf);
}

// --- criterion: round-trip IO ---------------------------------------------------

void criterion_roundtrip(const std::filesystem::path& dir) {
    bool pass = true;
    std::string detail = "features + checkpoints bit-exact, corruption rejected";
    Rng rng(89);

    Matrix m(9, 6);
    for (std::size_t i = 0; i < m.size(); ++i)
        m[i] = static_cast<double>(static_cast<float>(rng.uniform(-3.0, 3.0)));
    data::write_features(dir / "rt.d2ft", m);
    if (!(data::read_features(dir / "rt.d2ft") == m)) {
        pass = false;
        detail = "feature round trip not bit-exact";
    }

    model::ModelConfig mc;
    mc.feature_dim = 8;
    mc.num_classes = 3;
    mc.seed = 97;
    model::ModelParams params = model::init_params(mc);
    train::Checkpoint ckpt{mc, params, train::make_optimizer_state(params),
                           losses::EmaRef(mc.embed_dim()), 123};
    train::save_checkpoint(dir / "rt.d2ck", ckpt);
    const train::Checkpoint back = train::load_checkpoint(dir / "rt.d2ck");
    train::save_checkpoint(dir / "rt2.d2ck", back);
    std::ifstream a(dir / "rt.d2ck", std::ios::binary), b(dir / "rt2.d2ck", std::ios::binary);
    const std::string sa((std::istreambuf_iterator<char>(a)), {});
    const std::string sb((std::istreambuf_iterator<char>(b)), {});
    if (sa != sb || back.iteration != 123) {
        pass = false;
        detail = "checkpoint round trip not bit-exact";
    }

    // corrupted headers must fail with a diagnostic
    {
        std::string bad = sa;
        bad[1] = '!';
        std::ofstream os(dir / "bad.d2ck", std::ios::binary);
        os << bad;
    }
    try {
        train::load_checkpoint(dir / "bad.d2ck");
        pass = false;
        detail = "corrupted checkpoint accepted";
    } catch (const FormatError& e) {
        if (std::string(e.what()).find("magic") == std::string::npos) {
            pass = false;
            detail = "corruption diagnostic lacks detail";
        }
    }
    {
        std::ofstream os(dir / "bad.d2ft", std::ios::binary);
        os << "D2FTxxxx";
    }
    try {
        data::read_features(dir / "bad.d2ft");
        pass = false;
        detail = "corrupted feature file accepted";
    } catch (const FormatError&) {
    }
    report("round-trip io", pass, detail);
}

}  // namespace

int main() {
    const auto dir = std::filesystem::temp_directory_path() / "d2loc_acceptance";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);

    criterion_gradients();
    criterion_pdmi_trend();
    criterion_reduction_chain();
    criterion_svd();
    criterion_eval_oracle();
    criterion_inference();
    criterion_roundtrip(dir);

    // the long criterion last: default synthetic dataset, full ladder
    config::RunConfig cfg = config::desk_defaults();
    const data::SynthOutput ds = data::generate_synthetic(cfg.synth, dir / "dataset");
    criterion_ablation(ds.train, ds.test);

    if (failures == 0) {
        std::printf("all acceptance criteria passed\n");
        return 0;
    }
    std::printf("%d acceptance criteria failed\n", failures);
    return 1;
}
