#include "d2loc/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "d2loc/errors.hpp"

namespace d2loc::losses {

namespace {
constexpr double kLogClampLo = 1e-12;
constexpr double kLogClampHi = 1.0 - 1e-12;
constexpr double kClampInf = std::numeric_limits<double>::infinity();
}  // namespace

ClassificationVariant classification_variant_from_string(const std::string& s) {
    if (s == "cross_entropy") return ClassificationVariant::cross_entropy;
    if (s == "focal") return ClassificationVariant::focal;
    if (s == "discriminative") return ClassificationVariant::discriminative;
    throw ConfigError("unknown classification_variant: " + s);
}

DenoisingVariant denoising_variant_from_string(const std::string& s) {
    if (s == "none") return DenoisingVariant::none;
    if (s == "pdmi") return DenoisingVariant::pdmi;
    if (s == "l1") return DenoisingVariant::l1;
    if (s == "bce") return DenoisingVariant::bce;
    throw ConfigError("unknown denoising_variant: " + s);
}

DenoisingScope denoising_scope_from_string(const std::string& s) {
    if (s == "snippet_only") return DenoisingScope::snippet_only;
    if (s == "video_only") return DenoisingScope::video_only;
    if (s == "both") return DenoisingScope::both;
    throw ConfigError("unknown denoising_scope: " + s);
}

std::string to_string(ClassificationVariant v) {
    switch (v) {
        case ClassificationVariant::cross_entropy: return "cross_entropy";
        case ClassificationVariant::focal: return "focal";
        case ClassificationVariant::discriminative: return "discriminative";
    }
    return "?";
}

std::string to_string(DenoisingVariant v) {
    switch (v) {
        case DenoisingVariant::none: return "none";
        case DenoisingVariant::pdmi: return "pdmi";
        case DenoisingVariant::l1: return "l1";
        case DenoisingVariant::bce: return "bce";
    }
    return "?";
}

std::string to_string(DenoisingScope v) {
    switch (v) {
        case DenoisingScope::snippet_only: return "snippet_only";
        case DenoisingScope::video_only: return "video_only";
        case DenoisingScope::both: return "both";
    }
    return "?";
}

void LossConfig::validate() const {
    if (alpha < 0.0) throw ConfigError("alpha must be >= 0");
    if (gamma < 0.0) throw ConfigError("gamma must be >= 0");
    if (beta < 0.0) throw ConfigError("beta must be >= 0");
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must lie in (0, 1)");
    if (rank_tol <= 0.0) throw ConfigError("rank_tol must be positive");
    if (!(grad_sigma_floor >= 0.0 && grad_sigma_floor < 1.0))
        throw ConfigError("grad_sigma_floor must lie in [0, 1)");
}

nd::Array topdown_attention(const nd::Array& tcam) {
    if (tcam.rows() == 0 || tcam.cols() == 0) throw ShapeError("topdown_attention of empty TCAM");
    return nd::row_max(tcam);
}

namespace {

// Weighted sum of the rows of x selected by mask (0/1 column), weights w.
// The mask is a constant; gradients flow through w and x.
nd::Array masked_row_sum(const nd::Array& x, const nd::Array& w, const Matrix& mask) {
    nd::Array masked = nd::mul(w, nd::Array::leaf(mask, false));  // s x 1
    return nd::matmul(nd::transpose(masked), x);                  // 1 x d
}

}  // namespace

FgBgEmbeddings fg_bg_embeddings(const nd::Array& x, const nd::Array& lambda, double tau) {
    const std::size_t s = x.rows();
    if (lambda.rows() != s || lambda.cols() != 1)
        throw ShapeError("lambda must be s x 1 and match the embedding rows");

    Matrix fg_mask(s, 1), bg_mask(s, 1);
    std::size_t n_fg = 0, n_bg = 0;
    std::size_t arg_fg = 0, arg_bg = 0;
    for (std::size_t t = 0; t < s; ++t) {
        const double l = lambda.values()(t, 0);
        if (l > tau) {
            fg_mask(t, 0) = 1.0;
            ++n_fg;
        }
        if (1.0 - l > tau) {
            bg_mask(t, 0) = 1.0;
            ++n_bg;
        }
        if (l > lambda.values()(arg_fg, 0)) arg_fg = t;
        if (1.0 - l > 1.0 - lambda.values()(arg_bg, 0)) arg_bg = t;
    }

    FgBgEmbeddings out;
    out.fg_empty = n_fg == 0;
    out.bg_empty = n_bg == 0;
    if (out.fg_empty) fg_mask(arg_fg, 0) = 1.0;  // fall back to the extremal snippet
    if (out.bg_empty) bg_mask(arg_bg, 0) = 1.0;

    nd::Array lambda_bg = nd::affine(lambda, -1.0, 1.0);
    out.x_fg = masked_row_sum(x, lambda, fg_mask);
    out.x_bg = masked_row_sum(x, lambda_bg, bg_mask);
    return out;
}

PairWeights pair_weights(const VideoLossState& own, const VideoLossState& other, double gamma) {
    PairWeights w;
    w.w_fb = nd::clamp(nd::cosine(own.x_fg, other.x_bg), 0.0, kClampInf);
    w.w_fg = nd::affine(nd::cosine(own.x_fg, other.x_fg), -gamma, gamma);
    w.w_bg = nd::affine(nd::cosine(own.x_bg, other.x_bg), -gamma, gamma);
    return w;
}

std::size_t topk_pool_size(std::size_t num_snippets) {
    return (num_snippets + 7) / 8;  // ceil(s/8)
}

nd::Array video_prediction(const nd::Array& tcam) {
    const std::size_t s = tcam.rows();
    if (s == 0) throw ShapeError("video_prediction of empty TCAM");
    const std::size_t k = topk_pool_size(s);
    std::vector<nd::Array> per_class;
    per_class.reserve(tcam.cols());
    for (std::size_t c = 0; c < tcam.cols(); ++c)
        per_class.push_back(nd::transpose(nd::topk_mean(nd::column(tcam, c), k)));
    return nd::hstack(per_class);  // 1 x C
}

nd::Array discriminative_loss(const std::vector<VideoLossState>& batch,
                              const std::vector<std::size_t>& pairing, const LossConfig& cfg) {
    if (batch.empty()) throw UsageError("discriminative_loss on an empty batch");
    if (pairing.size() != batch.size())
        throw UsageError("pairing permutation size does not match the batch");
    const bool use_weights = cfg.classification_variant == ClassificationVariant::discriminative;
    if (use_weights && batch.size() < 2)
        throw UsageError("discriminative variant needs a batch of at least 2 videos");
    const double beta =
        cfg.classification_variant == ClassificationVariant::cross_entropy ? 0.0 : cfg.beta;

    std::vector<nd::Array> per_video;
    per_video.reserve(batch.size());
    for (std::size_t v = 0; v < batch.size(); ++v) {
        const VideoLossState& state = batch[v];
        nd::Array w_fb = nd::Array::scalar(0.0);
        nd::Array w_fg = nd::Array::scalar(0.0);
        nd::Array w_bg = nd::Array::scalar(0.0);
        if (use_weights) {
            PairWeights w = pair_weights(state, batch[pairing[v]], cfg.gamma);
            w_fb = w.w_fb;
            w_fg = w.w_fg;
            w_bg = w.w_bg;
        }

        nd::Array acc = nd::Array::scalar(0.0);
        for (std::size_t c = 0; c < state.y.size(); ++c) {
            nd::Array pc = nd::at(state.p, 0, c);
            nd::Array base, logterm;
            if (state.y[c]) {
                base = nd::add(nd::add(nd::affine(pc, -1.0, 1.0), w_fg), w_fb);
                logterm = nd::log(nd::clamp(pc, kLogClampLo, kLogClampHi));
            } else {
                base = nd::add(nd::add(pc, w_bg), w_fb);
                logterm = nd::log(nd::clamp(nd::affine(pc, -1.0, 1.0), kLogClampLo, kLogClampHi));
            }
            nd::Array penalty = nd::pow_scalar(nd::clamp(base, 0.0, kClampInf), beta);
            acc = nd::add(acc, nd::mul(penalty, logterm));
        }
        per_video.push_back(nd::affine(acc, -1.0, 0.0));
    }
    return nd::mean(nd::hstack(per_video));
}

std::vector<double> bottomup_attention(const Matrix& x_values, const Matrix& x_ref) {
    if (x_ref.rows() != 1 || x_ref.cols() != x_values.cols())
        throw ShapeError("x_ref must be 1 x embed_dim");
    double ref_norm = 0.0;
    for (std::size_t j = 0; j < x_ref.cols(); ++j) ref_norm += x_ref(0, j) * x_ref(0, j);
    ref_norm = std::sqrt(ref_norm);

    std::vector<double> out(x_values.rows());
    for (std::size_t t = 0; t < x_values.rows(); ++t) {
        double dot = 0.0, n2 = 0.0;
        for (std::size_t j = 0; j < x_values.cols(); ++j) {
            dot += x_values(t, j) * x_ref(0, j);
            n2 += x_values(t, j) * x_values(t, j);
        }
        const double n = std::sqrt(n2);
        const double cosv = (n < 1e-12 || ref_norm < 1e-12) ? 0.0 : dot / (n * ref_norm);
        out[t] = 0.5 * (1.0 - cosv);
    }
    return out;
}

void update_ema_ref(EmaRef& ref, const std::vector<Matrix>& batch_bg_embeddings) {
    if (batch_bg_embeddings.empty()) throw UsageError("update_ema_ref with an empty batch");
    Matrix mean(1, ref.x_ref.cols());
    for (const Matrix& e : batch_bg_embeddings) {
        if (!e.same_shape(mean)) throw ShapeError("background embedding shape mismatch");
        mean.add_scaled(e, 1.0 / static_cast<double>(batch_bg_embeddings.size()));
    }
    for (std::size_t j = 0; j < mean.cols(); ++j)
        ref.x_ref(0, j) = 0.9 * ref.x_ref(0, j) + 0.1 * mean(0, j);
    ref.iteration += 1;
}

SnippetJoint snippet_joint(const nd::Array& lambda, const std::vector<double>& lambda_prime) {
    if (lambda.rows() != lambda_prime.size() || lambda.cols() != 1)
        throw ShapeError("lambda must be s x 1 and match lambda_prime length");

    SnippetJoint joint;
    for (std::size_t t = 0; t < lambda_prime.size(); ++t) {
        if (lambda_prime[t] > 0.5) joint.fg_idx.push_back(t);
        else if (lambda_prime[t] < 0.5) joint.bg_idx.push_back(t);
        // exactly 0.5 belongs to neither set
    }
    const std::size_t n_f = joint.fg_idx.size();
    const std::size_t n_b = joint.bg_idx.size();
    joint.valid = n_f > 0 && n_b > 0;
    if (!joint.valid) return joint;

    std::vector<std::size_t> order = joint.fg_idx;
    order.insert(order.end(), joint.bg_idx.begin(), joint.bg_idx.end());
    const std::size_t z = order.size();

    nd::Array row0 = nd::transpose(nd::gather_rows(lambda, std::move(order)));  // 1 x z
    joint.p1 = nd::vstack(row0, nd::affine(row0, -1.0, 1.0));                   // 2 x z

    joint.y1 = Matrix(z, 2);
    const double inv_z = 1.0 / static_cast<double>(z);
    for (std::size_t i = 0; i < n_f; ++i) joint.y1(i, 0) = inv_z;
    for (std::size_t i = n_f; i < z; ++i) joint.y1(i, 1) = inv_z;
    return joint;
}

VideoJoint video_joint(const std::vector<nd::Array>& predictions,
                       const std::vector<std::vector<std::uint8_t>>& labels) {
    if (predictions.empty() || predictions.size() != labels.size())
        throw UsageError("video_joint needs matching non-empty prediction/label lists");
    const std::size_t c = predictions[0].cols();
    const std::size_t n = predictions.size();

    std::vector<nd::Array> cols;
    cols.reserve(n);
    for (const nd::Array& p : predictions) {
        if (p.rows() != 1 || p.cols() != c) throw ShapeError("video predictions must all be 1 x C");
        cols.push_back(nd::transpose(p));
    }
    VideoJoint joint;
    joint.p2 = nd::hstack(cols);  // C x n
    joint.y2 = Matrix(n, c);
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i].size() != c) throw ShapeError("label width does not match predictions");
        for (std::size_t j = 0; j < c; ++j)
            joint.y2(i, j) = static_cast<double>(labels[i][j]) / static_cast<double>(n);
    }
    return joint;
}

nd::Array pdmi(const nd::Array& p, const Matrix& y, double rank_tol, double grad_sigma_floor) {
    nd::Array u = nd::matmul(p, nd::Array::leaf(y, false));
    return nd::log_condition_number(u, rank_tol, grad_sigma_floor);
}

namespace {

// Snippet-term stand-ins for the ablation variants. Both compare the gathered
// top-down attention against its pseudo-labels (1 on t_f, 0 on t_b).
nd::Array snippet_l1(const SnippetJoint& joint) {
    const std::size_t z = joint.fg_idx.size() + joint.bg_idx.size();
    Matrix target(2, z);  // z * Y1^T
    for (std::size_t i = 0; i < joint.fg_idx.size(); ++i) target(0, i) = 1.0;
    for (std::size_t i = joint.fg_idx.size(); i < z; ++i) target(1, i) = 1.0;
    return nd::mean(nd::abs(nd::sub(joint.p1, nd::Array::leaf(std::move(target), false))));
}

nd::Array snippet_bce(const SnippetJoint& joint) {
    const std::size_t n_f = joint.fg_idx.size();
    const std::size_t z = n_f + joint.bg_idx.size();
    Matrix fg_mask(1, z), bg_mask(1, z);
    for (std::size_t i = 0; i < z; ++i) (i < n_f ? fg_mask : bg_mask)(0, i) = 1.0;

    // p1 row 0 is the gathered lambda, row 1 its complement
    nd::Array lam = nd::gather_rows(joint.p1, {0});  // 1 x z
    nd::Array log_p = nd::log(nd::clamp(lam, kLogClampLo, kLogClampHi));
    nd::Array log_1p = nd::log(nd::clamp(nd::affine(lam, -1.0, 1.0), kLogClampLo, kLogClampHi));
    nd::Array weighted = nd::add(nd::mul(nd::Array::leaf(fg_mask, false), log_p),
                                 nd::mul(nd::Array::leaf(bg_mask, false), log_1p));
    return nd::affine(nd::mean(weighted), -1.0, 0.0);
}

}  // namespace

nd::Array denoising_loss(const std::vector<VideoLossState>& batch, const LossConfig& cfg,
                         DenoisingBreakdown* breakdown) {
    if (batch.empty()) throw UsageError("denoising_loss on an empty batch");
    DenoisingBreakdown local;
    const bool want_snippet = cfg.denoising_scope != DenoisingScope::video_only;
    const bool want_video = cfg.denoising_scope != DenoisingScope::snippet_only;

    nd::Array total = nd::Array::scalar(0.0);

    if (want_snippet) {
        std::vector<nd::Array> terms;
        for (const VideoLossState& state : batch) {
            SnippetJoint joint = snippet_joint(state.lambda, state.lambda_prime);
            if (!joint.valid) continue;
            switch (cfg.denoising_variant) {
                case DenoisingVariant::pdmi:
                    terms.push_back(pdmi(joint.p1, joint.y1, cfg.rank_tol, cfg.grad_sigma_floor));
                    break;
                case DenoisingVariant::l1: terms.push_back(snippet_l1(joint)); break;
                case DenoisingVariant::bce: terms.push_back(snippet_bce(joint)); break;
                case DenoisingVariant::none: break;
            }
        }
        local.valid_snippet_joints = terms.size();
        if (!terms.empty()) {
            nd::Array snippet = nd::mean(nd::hstack(terms));
            local.snippet = snippet.item();
            total = nd::add(total, snippet);
        }
    }

    if (want_video) {
        std::vector<nd::Array> preds;
        std::vector<std::vector<std::uint8_t>> labels;
        for (const VideoLossState& state : batch) {
            preds.push_back(state.p);
            labels.push_back(state.y);
        }
        VideoJoint joint = video_joint(preds, labels);
        const Matrix u2 = matmul_values(joint.p2.values(), joint.y2);
        if (u2.frobenius_norm() == 0.0) {
            local.video_skipped = true;  // degenerate all-zero labels; caller logs
        } else {
            nd::Array video = pdmi(joint.p2, joint.y2, cfg.rank_tol, cfg.grad_sigma_floor);
            local.video = video.item();
            total = nd::add(total, video);
        }
    }

    if (breakdown) *breakdown = local;
    return total;
}

nd::Array total_loss(const std::vector<VideoLossState>& batch,
                     const std::vector<std::size_t>& pairing, const LossConfig& cfg,
                     LossBreakdown* breakdown) {
    cfg.validate();
    nd::Array dis = discriminative_loss(batch, pairing, cfg);
    LossBreakdown local;
    local.discriminative = dis.item();

    nd::Array total = dis;
    if (cfg.denoising_variant != DenoisingVariant::none) {
        DenoisingBreakdown den;
        nd::Array d = denoising_loss(batch, cfg, &den);
        local.denoising_snippet = den.snippet;
        local.denoising_video = den.video;
        local.video_term_skipped = den.video_skipped;
        total = nd::add(total, nd::affine(d, cfg.alpha, 0.0));
    }
    local.total = total.item();
    if (breakdown) *breakdown = local;
    return total;
}

std::vector<std::size_t> derangement_pairing(std::size_t n, Rng& rng) {
    if (n == 0) throw UsageError("pairing of an empty batch");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    std::vector<std::size_t> pairing(n);
    for (std::size_t i = 0; i < n; ++i) pairing[order[i]] = order[(i + 1) % n];
    return pairing;
}

VideoLossState make_video_state(const model::ForwardOutput& out,
                                const std::vector<std::uint8_t>& label, const Matrix& x_ref,
                                double tau) {
    VideoLossState state;
    state.lambda = topdown_attention(out.tcam);
    FgBgEmbeddings fb = fg_bg_embeddings(out.embeddings, state.lambda, tau);
    state.x_fg = fb.x_fg;
    state.x_bg = fb.x_bg;
    state.fg_empty = fb.fg_empty;
    state.bg_empty = fb.bg_empty;
    state.lambda_prime = bottomup_attention(out.embeddings.values(), x_ref);
    state.p = video_prediction(out.tcam);
    state.y = label;
    return state;
}

}  // namespace d2loc::losses
