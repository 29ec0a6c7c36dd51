#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "d2loc/matrix.hpp"
#include "d2loc/rng.hpp"

namespace d2loc::data {

struct GtSegment {
    std::size_t class_id = 0;
    double start_sec = 0.0;
    double end_sec = 0.0;
};

struct VideoRecord {
    std::string id;
    double fps = 25.0;
    std::size_t num_snippets = 0;
    std::string rgb_path;   // relative to the manifest directory
    std::string flow_path;  // relative to the manifest directory
    std::vector<std::size_t> labels;      // video-level class ids
    std::vector<GtSegment> gt_segments;   // evaluation only; never read by training
};

struct DatasetManifest {
    std::vector<std::string> classes;  // index = class id
    std::size_t snippet_frames = 16;   // L
    std::vector<VideoRecord> videos;
    std::filesystem::path base_dir;  // directory of the manifest file; not serialized

    std::filesystem::path resolve(const std::string& rel) const { return base_dir / rel; }
};

// What the trainer is allowed to see: no ground-truth segments.
struct TrainVideo {
    std::string id;
    std::size_t num_snippets = 0;
    std::filesystem::path rgb_path;
    std::filesystem::path flow_path;
    std::vector<std::size_t> labels;
};

std::vector<TrainVideo> training_view(const DatasetManifest& manifest);

// Feature file: magic "D2FT", u32 version=1, u32 s, u32 d, then s*d float32
// row-major (time-major), all little-endian.
void write_features(const std::filesystem::path& path, const Matrix& features);
Matrix read_features(const std::filesystem::path& path);

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

// Rejects unknown class ids, degenerate segments, and feature-file headers
// that do not match the record (and a consistent feature width across files).
void validate_manifest(const DatasetManifest& manifest);

// The single shared snippet<->seconds conversion.
double snippet_to_seconds(std::size_t index, std::size_t snippet_frames, double fps);
std::size_t seconds_to_snippet(double seconds, std::size_t snippet_frames, double fps);

struct SynthConfig {
    std::size_t num_classes = 5;
    std::size_t num_train = 60;
    std::size_t num_test = 20;
    std::size_t snippets_min = 40;
    std::size_t snippets_max = 96;
    std::size_t feature_dim = 32;  // even
    std::size_t instances_min = 1;
    std::size_t instances_max = 5;
    std::size_t instance_len_min = 3;   // snippets
    std::size_t instance_len_max = 10;  // snippets
    double noise_sigma = 0.4;
    std::uint64_t seed = 7;

    void validate() const;
};

struct SynthOutput {
    DatasetManifest full;   // all videos
    DatasetManifest train;  // first num_train videos
    DatasetManifest test;   // remaining num_test videos
    std::filesystem::path manifest_path;
    std::filesystem::path train_manifest_path;
    std::filesystem::path test_manifest_path;
    std::filesystem::path prototypes_path;  // (num_classes + 1) x d: background row first
};

// Plants 1..instances_max non-overlapping prototype segments per video on a
// background prototype, with independent Gaussian noise per stream. Seconds
// are derived from snippet indices at a fixed fps of 25.
SynthOutput generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& out_dir);

struct BatchItem {
    TrainVideo video;
    Matrix rgb;
    Matrix flow;
    std::vector<std::uint8_t> y;  // multi-hot labels, length C
};

// First `count` entries of a seeded partial Fisher-Yates pass over [0, n).
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t count, Rng& rng);

// Uniform sampling without replacement within a batch; loads features from disk.
std::vector<BatchItem> sample_batch(const DatasetManifest& manifest, std::size_t batch_size,
                                    Rng& rng);

BatchItem load_item(const DatasetManifest& manifest, std::size_t video_index);

}  // namespace d2loc::data
