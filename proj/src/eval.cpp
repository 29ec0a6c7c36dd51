#include "d2loc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "d2loc/errors.hpp"

namespace d2loc::eval {

double tiou(double start_a, double end_a, double start_b, double end_b) {
    if (!(start_a < end_a) || !(start_b < end_b))
        throw UsageError("tiou requires start < end for both intervals");
    const double inter = std::max(0.0, std::min(end_a, end_b) - std::max(start_a, start_b));
    const double uni = (end_a - start_a) + (end_b - start_b) - inter;
    return inter / uni;
}

namespace {

bool score_order(const infer::Detection& a, const infer::Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.video_id != b.video_id) return a.video_id < b.video_id;
    return a.start_sec < b.start_sec;
}

// Marks each detection TP/FP by greedy matching against unmatched ground
// truths of the same video (and class, when class_id is compared upstream).
std::vector<bool> greedy_match(const std::vector<infer::Detection>& sorted,
                               const std::vector<GtInstance>& gts, double iou_threshold,
                               std::size_t* matched_out) {
    std::vector<bool> tp(sorted.size(), false);
    std::vector<bool> used(gts.size(), false);
    std::size_t matched = 0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        double best = 0.0;
        std::size_t best_g = gts.size();
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (used[g] || gts[g].video_id != sorted[i].video_id) continue;
            const double ov = tiou(sorted[i].start_sec, sorted[i].end_sec, gts[g].start_sec,
                                   gts[g].end_sec);
            if (ov >= iou_threshold && ov > best) {
                best = ov;
                best_g = g;
            }
        }
        if (best_g < gts.size()) {
            used[best_g] = true;
            tp[i] = true;
            ++matched;
        }
    }
    if (matched_out) *matched_out = matched;
    return tp;
}

}  // namespace

std::optional<double> average_precision(std::vector<infer::Detection> detections,
                                        const std::vector<GtInstance>& ground_truths,
                                        double iou_threshold) {
    if (ground_truths.empty()) {
        if (detections.empty()) return std::nullopt;
        return 0.0;
    }
    if (detections.empty()) return 0.0;

    std::sort(detections.begin(), detections.end(), score_order);
    const std::vector<bool> tp = greedy_match(detections, ground_truths, iou_threshold, nullptr);

    const double num_gt = static_cast<double>(ground_truths.size());
    std::vector<double> precision(detections.size()), recall(detections.size());
    std::size_t tp_count = 0;
    for (std::size_t i = 0; i < detections.size(); ++i) {
        if (tp[i]) ++tp_count;
        precision[i] = static_cast<double>(tp_count) / static_cast<double>(i + 1);
        recall[i] = static_cast<double>(tp_count) / num_gt;
    }

    // Precision envelope over all points, integrated over recall.
    for (std::size_t i = precision.size() - 1; i-- > 0;)
        precision[i] = std::max(precision[i], precision[i + 1]);
    double ap = 0.0;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < precision.size(); ++i) {
        ap += (recall[i] - prev_recall) * precision[i];
        prev_recall = recall[i];
    }
    return ap;
}

namespace {

double map_at(const std::vector<infer::Detection>& detections,
              const data::DatasetManifest& manifest, double iou,
              std::map<std::size_t, double>* per_class) {
    double sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t c = 0; c < manifest.classes.size(); ++c) {
        std::vector<infer::Detection> dets;
        for (const infer::Detection& d : detections)
            if (d.class_id == c) dets.push_back(d);
        std::vector<GtInstance> gts;
        for (const data::VideoRecord& v : manifest.videos)
            for (const data::GtSegment& g : v.gt_segments)
                if (g.class_id == c) gts.push_back(GtInstance{v.id, g.start_sec, g.end_sec});

        const std::optional<double> ap = average_precision(std::move(dets), gts, iou);
        if (per_class && ap) (*per_class)[c] = *ap;
        if (!gts.empty()) {  // mAP averages classes that have ground truth
            sum += ap.value_or(0.0);
            ++counted;
        }
    }
    return counted == 0 ? 0.0 : sum / static_cast<double>(counted);
}

}  // namespace

EvalReport evaluate(const std::vector<infer::Detection>& detections,
                    const data::DatasetManifest& manifest, const std::vector<double>& ious) {
    std::set<std::string> video_ids;
    for (const data::VideoRecord& v : manifest.videos) video_ids.insert(v.id);
    for (const infer::Detection& d : detections) {
        if (d.class_id >= manifest.classes.size())
            throw UsageError("detection references unknown class id " + std::to_string(d.class_id));
        if (!video_ids.count(d.video_id))
            throw UsageError("detection references unknown video " + d.video_id);
        if (!(d.start_sec < d.end_sec) || !std::isfinite(d.score))
            throw UsageError("detection with degenerate interval or non-finite score");
    }

    EvalReport report;
    report.ious = ious;
    std::sort(report.ious.begin(), report.ious.end());
    for (double iou : report.ious) {
        std::map<std::size_t, double> per_class;
        report.per_iou_map[iou] = map_at(detections, manifest, iou, &per_class);
        for (const auto& [c, ap] : per_class) report.per_class_ap[c][iou] = ap;
    }

    double avg = 0.0;
    for (int i = 0; i < 10; ++i) avg += map_at(detections, manifest, 0.5 + 0.05 * i, nullptr);
    report.avg_map = avg / 10.0;

    // Micro-pooled F1 at IoU 0.5: greedy matching in score order, classes must
    // agree, each ground truth matched at most once.
    std::vector<infer::Detection> sorted = detections;
    std::sort(sorted.begin(), sorted.end(), score_order);
    std::size_t total_gt = 0;
    std::size_t tp_count = 0;
    std::vector<std::vector<bool>> used_per_class(manifest.classes.size());
    std::vector<std::vector<GtInstance>> gts_per_class(manifest.classes.size());
    for (const data::VideoRecord& v : manifest.videos)
        for (const data::GtSegment& g : v.gt_segments) {
            gts_per_class[g.class_id].push_back(GtInstance{v.id, g.start_sec, g.end_sec});
            ++total_gt;
        }
    for (std::size_t c = 0; c < manifest.classes.size(); ++c)
        used_per_class[c].assign(gts_per_class[c].size(), false);
    for (const infer::Detection& d : sorted) {
        const auto& gts = gts_per_class[d.class_id];
        auto& used = used_per_class[d.class_id];
        double best = 0.0;
        std::size_t best_g = gts.size();
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (used[g] || gts[g].video_id != d.video_id) continue;
            const double ov = tiou(d.start_sec, d.end_sec, gts[g].start_sec, gts[g].end_sec);
            if (ov >= 0.5 && ov > best) {
                best = ov;
                best_g = g;
            }
        }
        if (best_g < gts.size()) {
            used[best_g] = true;
            ++tp_count;
        }
    }
    report.tp = tp_count;
    report.fp = sorted.size() - tp_count;
    report.fn = total_gt - tp_count;
    const double denom = static_cast<double>(2 * report.tp + report.fp + report.fn);
    report.f1_at_05 = denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(report.tp) / denom;
    return report;
}

std::string report_table(const EvalReport& report, const data::DatasetManifest& manifest) {
    std::string out;
    char buf[160];
    out += "mAP @ IoU\n";
    std::string header = "  class/iou      ";
    for (double iou : report.ious) {
        std::snprintf(buf, sizeof(buf), "%8.2f", iou);
        header += buf;
    }
    out += header + "\n";
    for (const auto& [c, per_iou] : report.per_class_ap) {
        std::snprintf(buf, sizeof(buf), "  %-15s", manifest.classes[c].c_str());
        out += buf;
        for (double iou : report.ious) {
            auto it = per_iou.find(iou);
            if (it == per_iou.end()) std::snprintf(buf, sizeof(buf), "%8s", "-");
            else std::snprintf(buf, sizeof(buf), "%8.4f", it->second);
            out += buf;
        }
        out += "\n";
    }
    std::snprintf(buf, sizeof(buf), "  %-15s", "mAP");
    out += buf;
    for (double iou : report.ious) {
        std::snprintf(buf, sizeof(buf), "%8.4f", report.per_iou_map.at(iou));
        out += buf;
    }
    out += "\n";
    std::snprintf(buf, sizeof(buf), "AVG (0.5:0.05:0.95): %.4f\n", report.avg_map);
    out += buf;
    std::snprintf(buf, sizeof(buf), "F1@0.5: %.4f  (TP=%zu FP=%zu FN=%zu)\n", report.f1_at_05,
                  report.tp, report.fp, report.fn);
    out += buf;
    return out;
}

void save_report(const EvalReport& report, const data::DatasetManifest& manifest,
                 const std::filesystem::path& json_path, const std::filesystem::path& text_path) {
    nlohmann::ordered_json j;
    j["ious"] = report.ious;
    j["map"] = nlohmann::ordered_json::object();
    char key[32];
    for (const auto& [iou, v] : report.per_iou_map) {
        std::snprintf(key, sizeof(key), "%.2f", iou);
        j["map"][key] = v;
    }
    j["per_class_ap"] = nlohmann::ordered_json::object();
    for (const auto& [c, per_iou] : report.per_class_ap) {
        nlohmann::ordered_json jc;
        for (const auto& [iou, v] : per_iou) {
            std::snprintf(key, sizeof(key), "%.2f", iou);
            jc[key] = v;
        }
        j["per_class_ap"][manifest.classes[c]] = std::move(jc);
    }
    j["avg_map"] = report.avg_map;
    j["f1_at_0.5"] = report.f1_at_05;
    j["counts_at_0.5"] = {{"tp", report.tp}, {"fp", report.fp}, {"fn", report.fn}};

    std::ofstream os(json_path, std::ios::trunc);
    if (!os) throw IoError("cannot open " + json_path.string() + " for writing");
    os << j.dump(2) << "\n";

    std::ofstream ts(text_path, std::ios::trunc);
    if (!ts) throw IoError("cannot open " + text_path.string() + " for writing");
    ts << report_table(report, manifest);
}

}  // namespace d2loc::eval
