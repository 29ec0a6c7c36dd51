#include "d2loc/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "d2loc/errors.hpp"
#include "d2loc/losses.hpp"
#include "d2loc/model.hpp"
#include "d2loc/rng.hpp"

namespace d2loc::gradcheck {

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(lo, hi);
    return m;
}

// Fixed random weighting turns a matrix-valued op into a scalar with
// non-degenerate adjoints everywhere.
nd::Array weighted_sum(const nd::Array& x, const Matrix& w) {
    return nd::sum(nd::mul(x, nd::Array::leaf(w, false)));
}

std::vector<std::uint8_t> random_multi_hot(std::size_t c, Rng& rng) {
    std::vector<std::uint8_t> y(c);
    for (auto& v : y) v = rng.uniform() < 0.5 ? 1 : 0;
    const std::size_t fix = rng.uniform_index(c);
    if (std::count(y.begin(), y.end(), 1) == 0) y[fix] = 1;
    if (std::count(y.begin(), y.end(), 0) == 0) y[fix] = 0;
    return y;
}

// Shared fixture for the loss components: a small two-stream model over a
// batch of random videos, differentiated with respect to all parameters.
struct LossFixture {
    model::ModelConfig cfg;
    model::ModelParams params;
    std::vector<Matrix> rgb, flow;
    std::vector<std::vector<std::uint8_t>> labels;
    Matrix x_ref;
    losses::LossConfig loss;
    std::vector<std::size_t> pairing;
};

LossFixture make_loss_fixture(std::uint64_t seed) {
    LossFixture f;
    f.cfg.feature_dim = 8;
    f.cfg.num_classes = 4;
    f.cfg.kernel_size = 3;
    f.cfg.dilation = 1;
    f.cfg.seed = seed * 977 + 13;
    f.params = model::init_params(f.cfg);

    Rng rng(seed * 7919 + 5);
    const std::size_t batch = 3;
    const std::size_t s = 12;
    for (std::size_t v = 0; v < batch; ++v) {
        f.rgb.push_back(random_matrix(s, f.cfg.feature_dim, rng, -2.0, 2.0));
        f.flow.push_back(random_matrix(s, f.cfg.feature_dim, rng, -2.0, 2.0));
        f.labels.push_back(random_multi_hot(f.cfg.num_classes, rng));
    }
    f.x_ref = random_matrix(1, f.cfg.embed_dim(), rng, -1.0, 1.0);
    f.pairing = {1, 2, 0};
    f.loss.grad_sigma_floor = 0.0;  // check the exact singular-value gradient
    return f;
}

std::vector<losses::VideoLossState> build_states(const LossFixture& f) {
    std::vector<losses::VideoLossState> states;
    for (std::size_t v = 0; v < f.rgb.size(); ++v) {
        model::ForwardOutput out = model::forward(f.params, f.cfg, f.rgb[v], f.flow[v]);
        states.push_back(losses::make_video_state(out, f.labels[v], f.x_ref, f.loss.tau));
    }
    return states;
}

}  // namespace

std::vector<std::string> component_names() {
    return {"matmul",
            "conv1d_temporal",
            "sigmoid",
            "leaky_relu",
            "cosine",
            "topk_mean",
            "log_condition_number",
            "model_forward",
            "discriminative_loss",
            "pdmi_snippet",
            "pdmi_video",
            "total_loss"};
}

ComponentFixture make_component(const std::string& name, std::uint64_t seed,
                                const GradCheckConfig& cfg) {
    Rng rng(seed * 104729 + 11);
    ComponentFixture fix;
    fix.tolerance = cfg.tolerance_composite;

    if (name == "matmul") {
        nd::Array a = nd::Array::leaf(random_matrix(3, 4, rng), true);
        nd::Array b = nd::Array::leaf(random_matrix(4, 2, rng), true);
        Matrix w = random_matrix(3, 2, rng);
        fix.leaves = {a, b};
        fix.build = [=]() { return weighted_sum(nd::matmul(a, b), w); };
    } else if (name == "conv1d_temporal") {
        const std::size_t s = 6, c_in = 3, c_out = 2, k = 3, dil = 2;
        nd::Array input = nd::Array::leaf(random_matrix(s, c_in, rng), true);
        nd::Array kernel = nd::Array::leaf(random_matrix(k * c_in, c_out, rng), true);
        nd::Array bias = nd::Array::leaf(random_matrix(1, c_out, rng), true);
        Matrix w = random_matrix(s, c_out, rng);
        fix.leaves = {input, kernel, bias};
        fix.build = [=]() { return weighted_sum(nd::conv1d_temporal(input, kernel, bias, k, dil), w); };
    } else if (name == "sigmoid") {
        nd::Array x = nd::Array::leaf(random_matrix(4, 5, rng, -3.0, 3.0), true);
        Matrix w = random_matrix(4, 5, rng);
        fix.leaves = {x};
        fix.build = [=]() { return weighted_sum(nd::sigmoid(x), w); };
        fix.tolerance = cfg.tolerance_elementwise;
    } else if (name == "leaky_relu") {
        // keep values away from the kink at 0
        Matrix m(4, 5);
        for (std::size_t i = 0; i < m.size(); ++i)
            m[i] = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.2, 2.0);
        nd::Array x = nd::Array::leaf(std::move(m), true);
        Matrix w = random_matrix(4, 5, rng);
        fix.leaves = {x};
        fix.build = [=]() { return weighted_sum(nd::leaky_relu(x, 0.2), w); };
        fix.tolerance = cfg.tolerance_elementwise;
    } else if (name == "cosine") {
        nd::Array a = nd::Array::leaf(random_matrix(1, 6, rng), true);
        nd::Array b = nd::Array::leaf(random_matrix(1, 6, rng), true);
        fix.leaves = {a, b};
        fix.build = [=]() { return nd::cosine(a, b); };
        fix.tolerance = cfg.tolerance_elementwise;
    } else if (name == "topk_mean") {
        nd::Array x = nd::Array::leaf(random_matrix(9, 1, rng), true);
        fix.leaves = {x};
        fix.build = [=]() { return nd::topk_mean(x, 3); };
        fix.tolerance = cfg.tolerance_elementwise;
    } else if (name == "log_condition_number") {
        Matrix m = random_matrix(3, 3, rng);
        for (std::size_t i = 0; i < 3; ++i) m(i, i) += 1.0 + 0.7 * static_cast<double>(i);
        nd::Array u = nd::Array::leaf(std::move(m), true);
        fix.leaves = {u};
        fix.build = [=]() { return nd::log_condition_number(u, 1e-9); };
    } else if (name == "model_forward") {
        model::ModelConfig mc;
        mc.feature_dim = 8;
        mc.num_classes = 3;
        mc.seed = seed * 31 + 7;
        model::ModelParams params = model::init_params(mc);
        Matrix rgb = random_matrix(8, mc.feature_dim, rng, -2.0, 2.0);
        Matrix flow = random_matrix(8, mc.feature_dim, rng, -2.0, 2.0);
        Matrix w = random_matrix(8, mc.num_classes, rng);
        fix.leaves = params.all();
        fix.build = [=]() { return weighted_sum(model::forward(params, mc, rgb, flow).tcam, w); };
    } else {
        auto f = std::make_shared<LossFixture>(make_loss_fixture(seed));
        fix.leaves = f->params.all();
        if (name == "discriminative_loss") {
            fix.build = [f]() {
                return losses::discriminative_loss(build_states(*f), f->pairing, f->loss);
            };
        } else if (name == "pdmi_snippet") {
            f->loss.denoising_scope = losses::DenoisingScope::snippet_only;
            fix.build = [f]() { return losses::denoising_loss(build_states(*f), f->loss); };
        } else if (name == "pdmi_video") {
            f->loss.denoising_scope = losses::DenoisingScope::video_only;
            fix.build = [f]() { return losses::denoising_loss(build_states(*f), f->loss); };
        } else if (name == "total_loss") {
            fix.build = [f]() {
                return losses::total_loss(build_states(*f), f->pairing, f->loss);
            };
        } else {
            throw UsageError("unknown gradcheck component: " + name);
        }
    }
    return fix;
}

double max_relative_error(ComponentFixture& fixture, std::uint64_t seed, std::size_t coords,
                          double fd_step, bool sabotage) {
    for (nd::Array& leaf : fixture.leaves) leaf.zero_grad();
    nd::Array root = fixture.build();
    nd::backward(root);

    Rng rng(seed * 53 + 29);
    double worst = 0.0;
    for (std::size_t c = 0; c < coords; ++c) {
        nd::Array& leaf = fixture.leaves[rng.uniform_index(fixture.leaves.size())];
        const std::size_t i = rng.uniform_index(leaf.values().size());

        double analytic = leaf.grad()[i];
        if (sabotage) analytic = analytic * 1.01 + 1e-3;

        Matrix& values = leaf.mutable_values();
        const double saved = values[i];
        values[i] = saved + fd_step;
        const double plus = fixture.build().item();
        values[i] = saved - fd_step;
        const double minus = fixture.build().item();
        values[i] = saved;

        const double fd = (plus - minus) / (2.0 * fd_step);
        const double err = std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-6});
        worst = std::max(worst, err);
    }
    return worst;
}

std::vector<GradCheckEntry> run_gradcheck(const GradCheckConfig& cfg) {
    std::vector<GradCheckEntry> report;
    for (const std::string& name : component_names()) {
        GradCheckEntry entry;
        entry.component = name;
        for (std::uint64_t seed : cfg.seeds) {
            ComponentFixture fix = make_component(name, seed, cfg);
            entry.tolerance = fix.tolerance;
            const double err = max_relative_error(fix, seed, cfg.coords_per_component, cfg.fd_step,
                                                  cfg.sabotage == name);
            entry.max_rel_err = std::max(entry.max_rel_err, err);
        }
        entry.pass = entry.max_rel_err < entry.tolerance;
        report.push_back(entry);
    }
    return report;
}

}  // namespace d2loc::gradcheck
