#pragma once

#include <cstdint>
#include <vector>

#include "d2loc/autodiff.hpp"
#include "d2loc/matrix.hpp"

namespace d2loc::model {

struct ModelConfig {
    std::size_t feature_dim = 32;  // d, must be even; embeddings live in d/2
    std::size_t num_classes = 5;   // C >= 2
    std::size_t kernel_size = 3;   // odd
    std::size_t dilation = 1;
    double leaky_slope = 0.2;
    std::uint64_t seed = 1;

    std::size_t embed_dim() const { return feature_dim / 2; }
    void validate() const;
};

struct ConvLayer {
    nd::Array kernel;  // (kernel_size * c_in) x c_out
    nd::Array bias;    // 1 x c_out
};

struct StreamParams {
    ConvLayer tc1, tc2, tc3;
};

// Two parallel streams (appearance, motion), three temporal conv layers each.
// Widths: d -> d/2 -> d/2 -> C.
struct ModelParams {
    StreamParams appearance, motion;

    // Fixed traversal order shared by the optimizer and checkpoint format.
    std::vector<nd::Array> all() const;
};

// Kernels drawn from a symmetric uniform with variance 2/(fan_in + fan_out),
// biases zero, fully determined by config.seed.
ModelParams init_params(const ModelConfig& config);

struct ForwardOutput {
    nd::Array embeddings;  // s x (d/2), averaged post-activation second-layer outputs
    nd::Array tcam;        // s x C, averaged post-sigmoid third-layer outputs; entries in (0,1)
};

ForwardOutput forward(const ModelParams& params, const ModelConfig& config, const Matrix& rgb,
                      const Matrix& flow);

}  // namespace d2loc::model
