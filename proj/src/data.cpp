#include "d2loc/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "d2loc/errors.hpp"

namespace d2loc::data {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr char kFeatureMagic[4] = {'D', '2', 'F', 'T'};
constexpr std::uint32_t kFeatureVersion = 1;
constexpr double kSynthFps = 25.0;

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
}

float get_f32(std::istream& is) {
    const std::uint32_t bits = get_u32(is);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace

std::vector<TrainVideo> training_view(const DatasetManifest& manifest) {
    std::vector<TrainVideo> out;
    out.reserve(manifest.videos.size());
    for (const VideoRecord& v : manifest.videos)
        out.push_back(TrainVideo{v.id, v.num_snippets, manifest.resolve(v.rgb_path),
                                 manifest.resolve(v.flow_path), v.labels});
    return out;
}

void write_features(const std::filesystem::path& path, const Matrix& features) {
    if (features.rows() == 0 || features.cols() == 0)
        throw UsageError("feature matrices must be at least 1x1");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os.write(kFeatureMagic, 4);
    put_u32(os, kFeatureVersion);
    put_u32(os, static_cast<std::uint32_t>(features.rows()));
    put_u32(os, static_cast<std::uint32_t>(features.cols()));
    for (std::size_t i = 0; i < features.size(); ++i) put_f32(os, static_cast<float>(features[i]));
    if (!os) throw IoError("short write to " + path.string());
}

Matrix read_features(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());

    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kFeatureMagic, 4) != 0)
        throw FormatError(path.string() + ": bad magic at byte offset 0 (expected \"D2FT\")");
    const std::uint32_t version = get_u32(is);
    if (!is || version != kFeatureVersion)
        throw FormatError(path.string() + ": unsupported version " + std::to_string(version) +
                          " at byte offset 4");
    const std::uint32_t s = get_u32(is);
    const std::uint32_t d = get_u32(is);
    if (!is || s == 0 || d == 0)
        throw FormatError(path.string() + ": invalid dimensions in header at byte offset 8");

    Matrix out(s, d);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const float v = get_f32(is);
        if (!is)
            throw FormatError(path.string() + ": truncated payload at byte offset " +
                              std::to_string(16 + 4 * i) + " (expected " +
                              std::to_string(static_cast<std::size_t>(s) * d) + " floats)");
        out[i] = static_cast<double>(v);
    }
    return out;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    ordered_json j;
    j["classes"] = manifest.classes;
    j["snippet_frames"] = manifest.snippet_frames;
    j["videos"] = ordered_json::array();
    for (const VideoRecord& v : manifest.videos) {
        ordered_json jv;
        jv["id"] = v.id;
        jv["fps"] = v.fps;
        jv["num_snippets"] = v.num_snippets;
        jv["rgb_path"] = v.rgb_path;
        jv["flow_path"] = v.flow_path;
        jv["labels"] = v.labels;
        jv["gt_segments"] = ordered_json::array();
        for (const GtSegment& g : v.gt_segments)
            jv["gt_segments"].push_back({{"class_id", g.class_id},
                                         {"start_sec", g.start_sec},
                                         {"end_sec", g.end_sec}});
        j["videos"].push_back(std::move(jv));
    }
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    ordered_json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": invalid JSON: " + e.what());
    }
    DatasetManifest m;
    m.base_dir = path.parent_path();
    try {
        m.classes = j.at("classes").get<std::vector<std::string>>();
        m.snippet_frames = j.at("snippet_frames").get<std::size_t>();
        for (const auto& jv : j.at("videos")) {
            VideoRecord v;
            v.id = jv.at("id").get<std::string>();
            v.fps = jv.at("fps").get<double>();
            v.num_snippets = jv.at("num_snippets").get<std::size_t>();
            v.rgb_path = jv.at("rgb_path").get<std::string>();
            v.flow_path = jv.at("flow_path").get<std::string>();
            v.labels = jv.at("labels").get<std::vector<std::size_t>>();
            for (const auto& jg : jv.at("gt_segments"))
                v.gt_segments.push_back(GtSegment{jg.at("class_id").get<std::size_t>(),
                                                  jg.at("start_sec").get<double>(),
                                                  jg.at("end_sec").get<double>()});
            m.videos.push_back(std::move(v));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": manifest field error: " + e.what());
    }
    validate_manifest(m);
    return m;
}

void validate_manifest(const DatasetManifest& manifest) {
    std::set<std::string> names(manifest.classes.begin(), manifest.classes.end());
    if (names.size() != manifest.classes.size()) throw FormatError("duplicate class names");
    if (manifest.snippet_frames == 0) throw FormatError("snippet_frames must be positive");

    std::size_t feature_dim = 0;
    for (const VideoRecord& v : manifest.videos) {
        if (v.fps <= 0.0) throw FormatError("video " + v.id + ": fps must be positive");
        for (std::size_t label : v.labels)
            if (label >= manifest.classes.size())
                throw FormatError("video " + v.id + ": unknown class id " + std::to_string(label));
        for (const GtSegment& g : v.gt_segments) {
            if (g.class_id >= manifest.classes.size())
                throw FormatError("video " + v.id + ": gt segment with unknown class id " +
                                  std::to_string(g.class_id));
            if (std::find(v.labels.begin(), v.labels.end(), g.class_id) == v.labels.end())
                throw FormatError("video " + v.id + ": gt segment class not in video labels");
            if (!(g.start_sec >= 0.0 && g.start_sec < g.end_sec))
                throw FormatError("video " + v.id + ": gt segment must satisfy 0 <= start < end");
        }
        for (const std::string* rel : {&v.rgb_path, &v.flow_path}) {
            const auto p = manifest.resolve(*rel);
            Matrix f = read_features(p);
            if (f.rows() != v.num_snippets)
                throw FormatError(p.string() + ": header snippet count " +
                                  std::to_string(f.rows()) + " does not match manifest " +
                                  std::to_string(v.num_snippets));
            if (feature_dim == 0) feature_dim = f.cols();
            if (f.cols() != feature_dim)
                throw FormatError(p.string() + ": feature width " + std::to_string(f.cols()) +
                                  " differs from the dataset width " + std::to_string(feature_dim));
        }
    }
}

double snippet_to_seconds(std::size_t index, std::size_t snippet_frames, double fps) {
    if (fps <= 0.0) throw UsageError("fps must be positive");
    return static_cast<double>(index) * static_cast<double>(snippet_frames) / fps;
}

std::size_t seconds_to_snippet(double seconds, std::size_t snippet_frames, double fps) {
    if (fps <= 0.0) throw UsageError("fps must be positive");
    if (seconds < 0.0) throw UsageError("seconds must be non-negative");
    return static_cast<std::size_t>(std::floor(seconds * fps / static_cast<double>(snippet_frames)));
}

void SynthConfig::validate() const {
    if (num_classes < 2) throw ConfigError("synth num_classes must be >= 2");
    if (feature_dim == 0 || feature_dim % 2 != 0)
        throw ConfigError("synth feature_dim must be positive and even");
    if (snippets_min < 1 || snippets_min > snippets_max)
        throw ConfigError("synth snippets range is empty");
    if (instances_min < 1 || instances_min > instances_max)
        throw ConfigError("synth instances range is empty");
    if (instance_len_min < 1 || instance_len_min > instance_len_max)
        throw ConfigError("synth instance length range is empty");
    if (instance_len_max > snippets_min)
        throw ConfigError("synth instance_len_max must fit into the shortest video");
    if (noise_sigma < 0.0) throw ConfigError("synth noise_sigma must be >= 0");
    if (num_train + num_test == 0) throw ConfigError("synth dataset must contain videos");
}

namespace {

Matrix random_unit_prototypes(std::size_t count, std::size_t dim, Rng& rng) {
    Matrix protos(count, dim);
    for (std::size_t i = 0; i < count; ++i) {
        double norm = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            protos(i, j) = rng.normal();
            norm += protos(i, j) * protos(i, j);
        }
        norm = std::sqrt(norm);
        for (std::size_t j = 0; j < dim; ++j) protos(i, j) /= norm;
    }
    return protos;
}

struct PlantedInstance {
    std::size_t class_id;
    std::size_t start;  // snippets, inclusive
    std::size_t len;
};

std::vector<PlantedInstance> plant_instances(std::size_t s, const SynthConfig& cfg, Rng& rng) {
    // Sample the video's class set first (one class, sometimes two), then draw
    // instances from it. Untrimmed videos carry few distinct actions, and the
    // resulting label sparsity is what the class-imbalance losses target.
    std::vector<std::size_t> video_classes{rng.uniform_index(cfg.num_classes)};
    if (cfg.num_classes > 1 && rng.uniform() < 0.35) {
        std::size_t second = rng.uniform_index(cfg.num_classes);
        while (second == video_classes[0]) second = rng.uniform_index(cfg.num_classes);
        video_classes.push_back(second);
    }

    const std::size_t want =
        cfg.instances_min + rng.uniform_index(cfg.instances_max - cfg.instances_min + 1);
    std::vector<PlantedInstance> placed;
    for (std::size_t i = 0; i < want; ++i) {
        for (int attempt = 0; attempt < 50; ++attempt) {
            const std::size_t len =
                cfg.instance_len_min +
                rng.uniform_index(cfg.instance_len_max - cfg.instance_len_min + 1);
            if (len > s) break;
            const std::size_t start = rng.uniform_index(s - len + 1);
            // keep at least one background snippet between instances so every
            // planted segment stays a distinct run
            bool overlaps = false;
            for (const PlantedInstance& p : placed)
                if (start < p.start + p.len + 1 && p.start < start + len + 1) {
                    overlaps = true;
                    break;
                }
            if (!overlaps) {
                placed.push_back(PlantedInstance{
                    video_classes[rng.uniform_index(video_classes.size())], start, len});
                break;
            }
        }
    }
    std::sort(placed.begin(), placed.end(),
              [](const PlantedInstance& a, const PlantedInstance& b) { return a.start < b.start; });
    return placed;
}

}  // namespace

SynthOutput generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
    cfg.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "features", ec);
    if (ec) throw IoError("cannot create output directory " + out_dir.string());

    Rng rng(cfg.seed);
    // Row 0 is the background prototype, rows 1.. are the action classes.
    Matrix protos = random_unit_prototypes(cfg.num_classes + 1, cfg.feature_dim, rng);

    DatasetManifest full;
    full.base_dir = out_dir;
    full.snippet_frames = 16;
    for (std::size_t c = 0; c < cfg.num_classes; ++c)
        full.classes.push_back("action_" + std::to_string(c));

    const std::size_t total = cfg.num_train + cfg.num_test;
    for (std::size_t vi = 0; vi < total; ++vi) {
        const bool is_train = vi < cfg.num_train;
        VideoRecord rec;
        rec.id = (is_train ? "train_" : "test_") +
                 std::to_string(is_train ? vi : vi - cfg.num_train);
        rec.fps = kSynthFps;
        rec.num_snippets =
            cfg.snippets_min + rng.uniform_index(cfg.snippets_max - cfg.snippets_min + 1);
        rec.rgb_path = "features/" + rec.id + "_rgb.d2ft";
        rec.flow_path = "features/" + rec.id + "_flow.d2ft";

        const std::vector<PlantedInstance> instances = plant_instances(rec.num_snippets, cfg, rng);
        std::set<std::size_t> label_set;
        std::vector<std::size_t> snippet_class(rec.num_snippets, 0);  // 0 = background row
        for (const PlantedInstance& inst : instances) {
            label_set.insert(inst.class_id);
            for (std::size_t t = inst.start; t < inst.start + inst.len; ++t)
                snippet_class[t] = inst.class_id + 1;
            rec.gt_segments.push_back(GtSegment{
                inst.class_id, snippet_to_seconds(inst.start, full.snippet_frames, rec.fps),
                snippet_to_seconds(inst.start + inst.len, full.snippet_frames, rec.fps)});
        }
        rec.labels.assign(label_set.begin(), label_set.end());

        for (const std::string* rel : {&rec.rgb_path, &rec.flow_path}) {
            Matrix feats(rec.num_snippets, cfg.feature_dim);
            for (std::size_t t = 0; t < rec.num_snippets; ++t)
                for (std::size_t j = 0; j < cfg.feature_dim; ++j)
                    feats(t, j) = protos(snippet_class[t], j) + cfg.noise_sigma * rng.normal();
            write_features(out_dir / *rel, feats);
        }
        full.videos.push_back(std::move(rec));
    }

    SynthOutput out;
    out.full = full;
    out.train = full;
    out.test = full;
    out.train.videos.assign(full.videos.begin(), full.videos.begin() + cfg.num_train);
    out.test.videos.assign(full.videos.begin() + cfg.num_train, full.videos.end());

    out.manifest_path = out_dir / "manifest.json";
    out.train_manifest_path = out_dir / "train_manifest.json";
    out.test_manifest_path = out_dir / "test_manifest.json";
    out.prototypes_path = out_dir / "prototypes.d2ft";
    save_manifest(out.full, out.manifest_path);
    save_manifest(out.train, out.train_manifest_path);
    save_manifest(out.test, out.test_manifest_path);
    write_features(out.prototypes_path, protos);
    return out;
}

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t count, Rng& rng) {
    if (count > n) throw UsageError("cannot sample more items than available");
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(n - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(count);
    return pool;
}

BatchItem load_item(const DatasetManifest& manifest, std::size_t video_index) {
    const VideoRecord& rec = manifest.videos.at(video_index);
    BatchItem item;
    item.video = TrainVideo{rec.id, rec.num_snippets, manifest.resolve(rec.rgb_path),
                            manifest.resolve(rec.flow_path), rec.labels};
    item.rgb = read_features(item.video.rgb_path);
    item.flow = read_features(item.video.flow_path);
    item.y.assign(manifest.classes.size(), 0);
    for (std::size_t label : rec.labels) item.y[label] = 1;
    return item;
}

std::vector<BatchItem> sample_batch(const DatasetManifest& manifest, std::size_t batch_size,
                                    Rng& rng) {
    if (batch_size > manifest.videos.size())
        throw UsageError("batch_size exceeds the number of videos");
    std::vector<BatchItem> batch;
    batch.reserve(batch_size);
    for (std::size_t idx : sample_indices(manifest.videos.size(), batch_size, rng))
        batch.push_back(load_item(manifest, idx));
    return batch;
}

}  // namespace d2loc::data
