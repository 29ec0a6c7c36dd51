#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "d2loc/autodiff.hpp"
#include "d2loc/matrix.hpp"
#include "d2loc/model.hpp"
#include "d2loc/rng.hpp"

namespace d2loc::losses {

enum class ClassificationVariant { cross_entropy, focal, discriminative };
enum class DenoisingVariant { none, pdmi, l1, bce };
enum class DenoisingScope { snippet_only, video_only, both };

ClassificationVariant classification_variant_from_string(const std::string& s);
DenoisingVariant denoising_variant_from_string(const std::string& s);
DenoisingScope denoising_scope_from_string(const std::string& s);
std::string to_string(ClassificationVariant v);
std::string to_string(DenoisingVariant v);
std::string to_string(DenoisingScope v);

struct LossConfig {
    double alpha = 0.2;     // balance between discriminative and denoising terms
    double gamma = 0.01;    // intra-class compactness weight
    double beta = 2.0;      // focusing exponent
    double tau = 0.5;       // attention threshold for fg/bg pooling
    double rank_tol = 1e-9;
    // Backward-only stabilization of the condition-number loss; 0 keeps the
    // exact singular-value gradient everywhere.
    double grad_sigma_floor = 0.1;
    ClassificationVariant classification_variant = ClassificationVariant::discriminative;
    DenoisingVariant denoising_variant = DenoisingVariant::pdmi;
    DenoisingScope denoising_scope = DenoisingScope::both;

    void validate() const;
};

// Per-video quantities feeding the batch loss.
struct VideoLossState {
    nd::Array x_fg;  // 1 x (d/2)
    nd::Array x_bg;  // 1 x (d/2)
    bool fg_empty = false;
    bool bg_empty = false;
    nd::Array lambda;                  // s x 1, top-down attention
    std::vector<double> lambda_prime;  // length s, bottom-up attention, gradient-free
    nd::Array p;                       // 1 x C, video-level prediction
    std::vector<std::uint8_t> y;       // length C, binary video label
};

// Running-mean reference background embedding; never receives gradients.
struct EmaRef {
    Matrix x_ref;               // 1 x (d/2), zero before the first update
    std::size_t iteration = 0;  // number of updates applied

    explicit EmaRef(std::size_t embed_dim = 0) : x_ref(1, embed_dim) {}
};

// lambda(t) = max_c T[t,c]; gradient to the argmax entry, lowest class on ties.
nd::Array topdown_attention(const nd::Array& tcam);

struct FgBgEmbeddings {
    nd::Array x_fg;
    nd::Array x_bg;
    bool fg_empty = false;
    bool bg_empty = false;
};

// Attention-weighted sums over snippets with lambda (resp. 1-lambda) above tau.
// An empty index set falls back to the single extremal snippet and is flagged.
FgBgEmbeddings fg_bg_embeddings(const nd::Array& x, const nd::Array& lambda, double tau);

struct PairWeights {
    nd::Array w_fb;  // max(0, cos(x_fg, ~x_bg))
    nd::Array w_fg;  // gamma * (1 - cos(x_fg, ~x_fg))
    nd::Array w_bg;  // gamma * (1 - cos(x_bg, ~x_bg))
};

PairWeights pair_weights(const VideoLossState& own, const VideoLossState& other, double gamma);

// p[c] = mean of the ceil(s/8) largest entries of column c of the TCAM.
nd::Array video_prediction(const nd::Array& tcam);
std::size_t topk_pool_size(std::size_t num_snippets);  // ceil(s/8)

// Focal-style classification loss with the pairwise separation/grouping
// penalties folded into the focusing base; mean over the batch.
nd::Array discriminative_loss(const std::vector<VideoLossState>& batch,
                              const std::vector<std::size_t>& pairing, const LossConfig& cfg);

// lambda'(t) = 0.5 * (1 - cos(x(t), x_ref)); detached from the graph.
std::vector<double> bottomup_attention(const Matrix& x_values, const Matrix& x_ref);

// x_ref <- 0.9 * x_ref + 0.1 * mean(batch background embeddings)
void update_ema_ref(EmaRef& ref, const std::vector<Matrix>& batch_bg_embeddings);

struct SnippetJoint {
    nd::Array p1;  // 2 x z prediction matrix
    Matrix y1;     // z x 2 pseudo-label matrix, gradient-free
    bool valid = false;
    std::vector<std::size_t> fg_idx;  // t: lambda'(t) > 0.5
    std::vector<std::size_t> bg_idx;  // t: lambda'(t) < 0.5
};

SnippetJoint snippet_joint(const nd::Array& lambda, const std::vector<double>& lambda_prime);

struct VideoJoint {
    nd::Array p2;  // C x n, columns are per-video predictions
    Matrix y2;     // n x C, rows are labels / n, gradient-free
};

VideoJoint video_joint(const std::vector<nd::Array>& predictions,
                       const std::vector<std::vector<std::uint8_t>>& labels);

// log condition number of U = P * Y; gradient flows through P only.
nd::Array pdmi(const nd::Array& p, const Matrix& y, double rank_tol, double grad_sigma_floor = 0.0);

struct DenoisingBreakdown {
    double snippet = 0.0;  // L_DS value (or its l1/bce stand-in)
    double video = 0.0;    // L_DV value
    bool video_skipped = false;
    std::size_t valid_snippet_joints = 0;
};

nd::Array denoising_loss(const std::vector<VideoLossState>& batch, const LossConfig& cfg,
                         DenoisingBreakdown* breakdown = nullptr);

struct LossBreakdown {
    double discriminative = 0.0;
    double denoising_snippet = 0.0;
    double denoising_video = 0.0;
    double total = 0.0;
    bool video_term_skipped = false;
};

// discriminative + alpha * denoising, subject to the configured variants.
nd::Array total_loss(const std::vector<VideoLossState>& batch,
                     const std::vector<std::size_t>& pairing, const LossConfig& cfg,
                     LossBreakdown* breakdown = nullptr);

// Ring shift of a shuffled order: a seeded permutation with no fixed points
// for n >= 2 (n == 1 maps the single video to itself).
std::vector<std::size_t> derangement_pairing(std::size_t n, Rng& rng);

// Assembles the per-video state from a forward pass.
VideoLossState make_video_state(const model::ForwardOutput& out,
                                const std::vector<std::uint8_t>& label, const Matrix& x_ref,
                                double tau);

}  // namespace d2loc::losses
