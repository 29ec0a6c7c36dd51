#include "d2loc/model.hpp"

#include <cmath>

#include "d2loc/errors.hpp"
#include "d2loc/rng.hpp"

namespace d2loc::model {

void ModelConfig::validate() const {
    if (feature_dim == 0 || feature_dim % 2 != 0)
        throw ConfigError("feature_dim must be a positive even number");
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (kernel_size % 2 == 0) throw ConfigError("kernel_size must be odd");
    if (dilation < 1) throw ConfigError("dilation must be >= 1");
}

std::vector<nd::Array> ModelParams::all() const {
    std::vector<nd::Array> out;
    for (const StreamParams* s : {&appearance, &motion})
        for (const ConvLayer* l : {&s->tc1, &s->tc2, &s->tc3}) {
            out.push_back(l->kernel);
            out.push_back(l->bias);
        }
    return out;
}

namespace {

ConvLayer init_layer(std::size_t kernel_size, std::size_t c_in, std::size_t c_out, Rng& rng) {
    const double fan_in = static_cast<double>(kernel_size * c_in);
    const double fan_out = static_cast<double>(c_out);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));  // Var = 2/(fan_in+fan_out)
    Matrix kernel(kernel_size * c_in, c_out);
    for (std::size_t i = 0; i < kernel.size(); ++i) kernel[i] = rng.uniform(-limit, limit);
    return ConvLayer{nd::Array::leaf(std::move(kernel), true),
                     nd::Array::leaf(Matrix(1, c_out), true)};
}

}  // namespace

ModelParams init_params(const ModelConfig& config) {
    config.validate();
    Rng rng(config.seed);
    const std::size_t d = config.feature_dim;
    const std::size_t h = config.embed_dim();
    const std::size_t c = config.num_classes;
    const std::size_t k = config.kernel_size;
    ModelParams params;
    for (StreamParams* s : {&params.appearance, &params.motion}) {
        s->tc1 = init_layer(k, d, h, rng);
        s->tc2 = init_layer(k, h, h, rng);
        s->tc3 = init_layer(k, h, c, rng);
    }
    return params;
}

ForwardOutput forward(const ModelParams& params, const ModelConfig& config, const Matrix& rgb,
                      const Matrix& flow) {
    if (rgb.rows() == 0) throw ShapeError("forward requires at least one snippet");
    if (!rgb.same_shape(flow)) throw ShapeError("rgb and flow features differ in shape");
    if (rgb.cols() != config.feature_dim)
        throw ShapeError("feature width does not match config.feature_dim");

    const std::size_t k = config.kernel_size;
    const std::size_t dil = config.dilation;
    const double slope = config.leaky_slope;

    auto stream_h2 = [&](const StreamParams& s, const Matrix& input) {
        nd::Array x = nd::Array::leaf(input, false);
        nd::Array h1 = nd::leaky_relu(nd::conv1d_temporal(x, s.tc1.kernel, s.tc1.bias, k, dil), slope);
        return nd::leaky_relu(nd::conv1d_temporal(h1, s.tc2.kernel, s.tc2.bias, k, dil), slope);
    };

    nd::Array h2_app = stream_h2(params.appearance, rgb);
    nd::Array h2_mot = stream_h2(params.motion, flow);

    nd::Array embeddings = nd::affine(nd::add(h2_app, h2_mot), 0.5, 0.0);

    // Each stream's logits are squashed first, then the activations are averaged.
    nd::Array a_app = nd::sigmoid(
        nd::conv1d_temporal(h2_app, params.appearance.tc3.kernel, params.appearance.tc3.bias, k, dil));
    nd::Array a_mot = nd::sigmoid(
        nd::conv1d_temporal(h2_mot, params.motion.tc3.kernel, params.motion.tc3.bias, k, dil));
    nd::Array tcam = nd::affine(nd::add(a_app, a_mot), 0.5, 0.0);

    return ForwardOutput{std::move(embeddings), std::move(tcam)};
}

}  // namespace d2loc::model
