#include "d2loc/infer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "d2loc/errors.hpp"
#include "d2loc/losses.hpp"

namespace d2loc::infer {

InferConfig::InferConfig() {
    for (int i = 1; i <= 20; ++i) thresholds.push_back(0.025 * i);
}

void InferConfig::validate() const {
    if (thresholds.empty()) throw ConfigError("thresholds must be non-empty");
    double prev = 0.0;
    for (double t : thresholds) {
        if (!(t > 0.0 && t < 1.0)) throw ConfigError("thresholds must lie in (0, 1)");
        if (t <= prev && prev != 0.0) throw ConfigError("thresholds must be strictly increasing");
        prev = t;
    }
    if (!(nms_iou > 0.0 && nms_iou <= 1.0)) throw ConfigError("nms_iou must lie in (0, 1]");
    if (s_th_fraction < 0.0) throw ConfigError("s_th_fraction must be >= 0");
    if (inflation_fraction < 0.0) throw ConfigError("inflation_fraction must be >= 0");
    if (!(p_th_fraction > 0.0 && p_th_fraction <= 1.0))
        throw ConfigError("p_th_fraction must lie in (0, 1]");
}

std::vector<std::size_t> relevant_classes(const std::vector<double>& p, double p_th_fraction) {
    if (p.empty()) throw UsageError("relevant_classes on an empty prediction");
    const double pmax = *std::max_element(p.begin(), p.end());
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < p.size(); ++c)
        if (p[c] >= p_th_fraction * pmax) out.push_back(c);
    return out;
}

std::vector<double> refine(const std::vector<double>& tcam_column,
                           const std::vector<double>& lambda_prime) {
    if (tcam_column.size() != lambda_prime.size())
        throw ShapeError("refine operands differ in length");
    std::vector<double> out(tcam_column.size());
    for (std::size_t t = 0; t < out.size(); ++t) out[t] = lambda_prime[t] * tcam_column[t];
    return out;
}

std::vector<std::pair<std::size_t, std::size_t>> segments_at_threshold(
    const std::vector<double>& refined, double threshold) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    std::size_t t = 0;
    while (t < refined.size()) {
        if (refined[t] > threshold) {
            std::size_t start = t;
            while (t + 1 < refined.size() && refined[t + 1] > threshold) ++t;
            out.emplace_back(start, t);
        }
        ++t;
    }
    return out;
}

double score_proposal(const std::vector<double>& refined,
                      std::pair<std::size_t, std::size_t> segment, double inflation_fraction) {
    const auto [start, end] = segment;
    if (start > end || end >= refined.size()) throw UsageError("invalid proposal segment");
    const std::size_t len = end - start + 1;

    double inner = 0.0;
    for (std::size_t t = start; t <= end; ++t) inner += refined[t];
    inner /= static_cast<double>(len);

    const std::size_t width = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(inflation_fraction * static_cast<double>(len) + 0.5)));
    double outer_sum = 0.0;
    std::size_t outer_count = 0;
    const std::size_t left_begin = start >= width ? start - width : 0;
    for (std::size_t t = left_begin; t < start; ++t) {
        outer_sum += refined[t];
        ++outer_count;
    }
    const std::size_t right_end = std::min(refined.size(), end + 1 + width);
    for (std::size_t t = end + 1; t < right_end; ++t) {
        outer_sum += refined[t];
        ++outer_count;
    }
    const double outer = outer_count == 0 ? 0.0 : outer_sum / static_cast<double>(outer_count);
    return inner - outer;
}

double snippet_tiou(std::size_t s1, std::size_t e1, std::size_t s2, std::size_t e2) {
    const std::size_t lo = std::max(s1, s2);
    const std::size_t hi = std::min(e1, e2);
    const double inter = hi >= lo ? static_cast<double>(hi - lo + 1) : 0.0;
    const double len1 = static_cast<double>(e1 - s1 + 1);
    const double len2 = static_cast<double>(e2 - s2 + 1);
    return inter / (len1 + len2 - inter);
}

namespace {

bool nms_order(const Proposal& a, const Proposal& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.start_snippet != b.start_snippet) return a.start_snippet < b.start_snippet;
    const std::size_t la = a.end_snippet - a.start_snippet;
    const std::size_t lb = b.end_snippet - b.start_snippet;
    if (la != lb) return la > lb;
    return a.threshold_origin < b.threshold_origin;
}

}  // namespace

std::vector<Proposal> nms(std::vector<Proposal> proposals, double iou_threshold) {
    std::sort(proposals.begin(), proposals.end(), nms_order);
    std::vector<Proposal> kept;
    std::vector<bool> removed(proposals.size(), false);
    for (std::size_t i = 0; i < proposals.size(); ++i) {
        if (removed[i]) continue;
        kept.push_back(proposals[i]);
        for (std::size_t j = i + 1; j < proposals.size(); ++j) {
            if (removed[j]) continue;
            if (snippet_tiou(proposals[i].start_snippet, proposals[i].end_snippet,
                             proposals[j].start_snippet, proposals[j].end_snippet) > iou_threshold)
                removed[j] = true;
        }
    }
    return kept;
}

std::vector<double> video_prediction_values(const Matrix& tcam) {
    const std::size_t s = tcam.rows();
    if (s == 0) throw ShapeError("video prediction of an empty TCAM");
    const std::size_t k = losses::topk_pool_size(s);
    std::vector<double> p(tcam.cols());
    std::vector<double> col(s);
    for (std::size_t c = 0; c < tcam.cols(); ++c) {
        for (std::size_t t = 0; t < s; ++t) col[t] = tcam(t, c);
        std::nth_element(col.begin(), col.begin() + static_cast<std::ptrdiff_t>(k - 1), col.end(),
                         std::greater<>());
        double sum = 0.0;
        for (std::size_t i = 0; i < k; ++i) sum += col[i];
        p[c] = sum / static_cast<double>(k);
    }
    return p;
}

std::vector<Detection> detect(const Matrix& tcam, const std::vector<double>& lambda_prime,
                              const std::vector<double>& video_prediction,
                              const data::VideoRecord& record, std::size_t snippet_frames,
                              const InferConfig& cfg) {
    cfg.validate();
    const std::size_t s = tcam.rows();
    if (lambda_prime.size() != s) throw ShapeError("lambda_prime length does not match TCAM rows");
    if (video_prediction.size() != tcam.cols())
        throw ShapeError("video prediction length does not match TCAM columns");

    std::vector<Proposal> pool;
    for (std::size_t c : relevant_classes(video_prediction, cfg.p_th_fraction)) {
        std::vector<double> col(s);
        for (std::size_t t = 0; t < s; ++t) col[t] = tcam(t, c);
        const std::vector<double> refined = refine(col, lambda_prime);

        // Identical (class, span) proposals from different thresholds carry the
        // same score; keep one.
        std::map<std::pair<std::size_t, std::size_t>, Proposal> unique;
        for (double thr : cfg.thresholds) {
            for (auto seg : segments_at_threshold(refined, thr)) {
                auto it = unique.find(seg);
                if (it != unique.end()) continue;
                Proposal prop;
                prop.class_id = c;
                prop.start_snippet = seg.first;
                prop.end_snippet = seg.second;
                prop.score = score_proposal(refined, seg, cfg.inflation_fraction);
                prop.threshold_origin = thr;
                unique.emplace(seg, prop);
            }
        }
        for (auto& [seg, prop] : unique) pool.push_back(prop);
    }
    if (pool.empty()) return {};

    double max_score = pool.front().score;  // pre-NMS maximum over the whole video
    for (const Proposal& p : pool) max_score = std::max(max_score, p.score);
    const double s_th = cfg.s_th_fraction * max_score;

    std::vector<Detection> detections;
    std::map<std::size_t, std::vector<Proposal>> by_class;
    for (const Proposal& p : pool) by_class[p.class_id].push_back(p);
    for (auto& [c, props] : by_class) {
        for (const Proposal& p : nms(std::move(props), cfg.nms_iou)) {
            if (p.score <= s_th) continue;
            Detection det;
            det.video_id = record.id;
            det.class_id = c;
            det.start_sec = data::snippet_to_seconds(p.start_snippet, snippet_frames, record.fps);
            det.end_sec = data::snippet_to_seconds(p.end_snippet + 1, snippet_frames, record.fps);
            det.score = p.score;
            detections.push_back(det);
        }
    }
    std::sort(detections.begin(), detections.end(), [](const Detection& a, const Detection& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.start_sec != b.start_sec) return a.start_sec < b.start_sec;
        return a.class_id < b.class_id;
    });
    return detections;
}

void save_detections(const std::vector<Detection>& detections, const std::filesystem::path& path) {
    std::vector<Detection> sorted = detections;
    std::stable_sort(sorted.begin(), sorted.end(), [](const Detection& a, const Detection& b) {
        if (a.video_id != b.video_id) return a.video_id < b.video_id;
        return a.score > b.score;
    });
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const Detection& d : sorted)
        j.push_back({{"video_id", d.video_id},
                     {"class_id", d.class_id},
                     {"start_sec", d.start_sec},
                     {"end_sec", d.end_sec},
                     {"score", d.score}});
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << j.dump(2) << "\n";
}

std::vector<Detection> load_detections(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": invalid JSON: " + e.what());
    }
    std::vector<Detection> out;
    try {
        for (const auto& jd : j)
            out.push_back(Detection{jd.at("video_id").get<std::string>(),
                                    jd.at("class_id").get<std::size_t>(),
                                    jd.at("start_sec").get<double>(),
                                    jd.at("end_sec").get<double>(),
                                    jd.at("score").get<double>()});
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": detection field error: " + e.what());
    }
    return out;
}

}  // namespace d2loc::infer
