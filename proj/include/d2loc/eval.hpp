#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "d2loc/data.hpp"
#include "d2loc/infer.hpp"

namespace d2loc::eval {

struct GtInstance {
    std::string video_id;
    double start_sec = 0.0;
    double end_sec = 0.0;
};

struct EvalReport {
    std::vector<double> ious;                          // requested thresholds, ascending
    std::map<double, double> per_iou_map;              // iou -> mAP
    std::map<std::size_t, std::map<double, double>> per_class_ap;  // class -> iou -> AP
    double avg_map = 0.0;   // mean mAP over 0.5:0.05:0.95
    double f1_at_05 = 0.0;  // micro-averaged at IoU 0.5
    std::size_t tp = 0, fp = 0, fn = 0;  // pooled counts at IoU 0.5
};

// Temporal IoU on second intervals; UsageError on degenerate intervals.
double tiou(double start_a, double end_a, double start_b, double end_b);

// All-points interpolated AP (precision envelope) with greedy score-order
// matching per video. Returns nullopt when there are neither detections nor
// ground truths; 0 when there are detections but no ground truths.
std::optional<double> average_precision(std::vector<infer::Detection> detections,
                                        const std::vector<GtInstance>& ground_truths,
                                        double iou_threshold);

EvalReport evaluate(const std::vector<infer::Detection>& detections,
                    const data::DatasetManifest& manifest, const std::vector<double>& ious);

std::string report_table(const EvalReport& report, const data::DatasetManifest& manifest);
void save_report(const EvalReport& report, const data::DatasetManifest& manifest,
                 const std::filesystem::path& json_path, const std::filesystem::path& text_path);

}  // namespace d2loc::eval
