#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "d2loc/data.hpp"
#include "d2loc/matrix.hpp"

namespace d2loc::infer {

struct InferConfig {
    std::vector<double> thresholds;  // defaults to 0.025..0.5 step 0.025
    double nms_iou = 0.5;
    double s_th_fraction = 0.10;      // keep proposals with S > fraction * per-video max S
    double inflation_fraction = 0.25; // outer window width per side
    double p_th_fraction = 0.5;       // relevant classes: p[c] >= fraction * max(p)

    InferConfig();
    void validate() const;
};

struct Proposal {
    std::size_t class_id = 0;
    std::size_t start_snippet = 0;  // inclusive
    std::size_t end_snippet = 0;    // inclusive
    double score = 0.0;             // outer-inner contrast S
    double threshold_origin = 0.0;
};

struct Detection {
    std::string video_id;
    std::size_t class_id = 0;
    double start_sec = 0.0;
    double end_sec = 0.0;
    double score = 0.0;
};

// {c : p[c] >= fraction * max(p)}; always contains the argmax.
std::vector<std::size_t> relevant_classes(const std::vector<double>& p, double p_th_fraction);

// r_c = lambda' * T_c elementwise.
std::vector<double> refine(const std::vector<double>& tcam_column,
                           const std::vector<double>& lambda_prime);

// Maximal runs of consecutive t with r[t] > thr, inclusive endpoints.
std::vector<std::pair<std::size_t, std::size_t>> segments_at_threshold(
    const std::vector<double>& refined, double threshold);

// S = mean inside - mean over the clipped outer windows (width
// max(1, round(fraction * len)) per side; 0 if both windows are empty).
double score_proposal(const std::vector<double>& refined,
                      std::pair<std::size_t, std::size_t> segment, double inflation_fraction);

// Greedy class-wise NMS; callers pass proposals of a single class. Ties break
// toward the earlier start, then the longer segment.
std::vector<Proposal> nms(std::vector<Proposal> proposals, double iou_threshold);

// Snippet-interval tIoU (inclusive indices, unit snippet length).
double snippet_tiou(std::size_t s1, std::size_t e1, std::size_t s2, std::size_t e2);

// Full per-video pipeline: relevant classes -> refined sequences ->
// multi-threshold proposals -> contrast scores -> class-wise NMS -> S_th
// filter (threshold computed from the pre-NMS maximum) -> seconds.
std::vector<Detection> detect(const Matrix& tcam, const std::vector<double>& lambda_prime,
                              const std::vector<double>& video_prediction,
                              const data::VideoRecord& record, std::size_t snippet_frames,
                              const InferConfig& cfg);

// Gradient-free top-k pooling used at inference time.
std::vector<double> video_prediction_values(const Matrix& tcam);

void save_detections(const std::vector<Detection>& detections, const std::filesystem::path& path);
std::vector<Detection> load_detections(const std::filesystem::path& path);

}  // namespace d2loc::infer
