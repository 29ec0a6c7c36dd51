#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

#include "d2loc/matrix.hpp"

namespace d2loc::nd {

// Reverse-mode differentiation over a fixed op vocabulary. Each op records a
// node whose closure knows how to push the output adjoint into its parents.
// The graph is the tape: it lives in the shared_ptr links between nodes and is
// rebuilt on every forward pass. Leaves created with requires_grad=true keep
// their identity across passes, which is how model parameters accumulate
// gradients over a whole batch.
//
// A graph and its arrays belong to one execution context; distinct graphs may
// be built and differentiated concurrently.

struct Node;
using NodePtr = std::shared_ptr<Node>;

// Pushes this node's adjoint into the parents. parent_adj[i] is null when
// parents[i] does not require grad.
using BackwardFn =
    std::function<void(const Node& self, const Matrix& out_adj, const std::vector<Matrix*>& parent_adj)>;

struct Node {
    Matrix values;
    Matrix grad;  // same shape as values, accumulated by backward()
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    BackwardFn backprop;  // empty for leaves
};

class Array {
public:
    Array() = default;

    static Array leaf(Matrix values, bool requires_grad = false);
    static Array scalar(double v);  // 1x1 constant, no grad

    bool defined() const { return node_ != nullptr; }
    const Matrix& values() const { return node_->values; }
    const Matrix& grad() const { return node_->grad; }
    bool requires_grad() const { return node_->requires_grad; }
    std::size_t rows() const { return node_->values.rows(); }
    std::size_t cols() const { return node_->values.cols(); }

    // Scalar (1x1) value; UsageError otherwise.
    double item() const;

    void zero_grad() { node_->grad.fill(0.0); }

    // Value mutation for leaves: optimizer steps and finite-difference probes.
    Matrix& mutable_values() { return node_->values; }
    Matrix& mutable_grad() { return node_->grad; }

    Node* node() const { return node_.get(); }

    static Array from_op(Matrix values, std::vector<Array> parents, BackwardFn backprop);

private:
    NodePtr node_;
};

// Accumulates d(root)/dx into the grad of every reachable array that requires
// grad. Repeated calls accumulate; callers zero grads between steps.
void backward(const Array& root);

// --- elementwise / structural ops -----------------------------------------

Array add(const Array& a, const Array& b);
Array sub(const Array& a, const Array& b);
Array mul(const Array& a, const Array& b);                 // elementwise
Array affine(const Array& a, double scale, double shift);  // scale*x + shift
Array sigmoid(const Array& x);
Array leaky_relu(const Array& x, double slope);
Array log(const Array& x);
Array abs(const Array& x);
Array pow_scalar(const Array& x, double exponent);
Array clamp(const Array& x, double lo, double hi);
Array sum(const Array& x);   // 1x1
Array mean(const Array& x);  // 1x1

Array transpose(const Array& x);
Array at(const Array& x, std::size_t r, std::size_t c);  // 1x1 view-copy
Array column(const Array& x, std::size_t c);             // rows x 1
Array gather_rows(const Array& x, std::vector<std::size_t> idx);
Array vstack(const Array& a, const Array& b);
Array hstack(const std::vector<Array>& parts);

// Leaf copy of the values, detached from the graph.
Array detach(const Array& x);

// --- linear algebra / model ops --------------------------------------------

Array matmul(const Array& a, const Array& b);

// 1-D convolution along the time axis (rows) with zero same-padding.
// input: s x c_in, kernel: (k*c_in) x c_out, bias: 1 x c_out.
// Tap j reads input at t + (j - (k-1)/2) * dilation.
Array conv1d_temporal(const Array& input, const Array& kernel, const Array& bias,
                      std::size_t kernel_size, std::size_t dilation);

// cos(a, b) with a zero-norm guard: if either norm < 1e-12 the result is the
// constant 0 and carries no gradient.
Array cosine(const Array& a, const Array& b);

// Mean of the k largest entries of a vector; ties broken by lowest index.
// Backward routes 1/k to each selected index.
Array topk_mean(const Array& x, std::size_t k);

// Per-row max over columns (s x C -> s x 1); gradient goes to the argmax,
// lowest column index on ties.
Array row_max(const Array& x);

// log(sigma_1 / sigma_r) with r the numerical rank. Gradient is
// (1/sigma_1) u_1 v_1^T - (1/sigma_r) u_r v_r^T, zeroed when
// sigma_1 - sigma_r < 1e-9 * sigma_1 (the loss sits at its optimum).
// grad_sigma_floor > 0 replaces sigma_r in the backward factor by
// max(sigma_r, floor * sigma_1), bounding the gradient on ill-conditioned
// inputs; the value is unaffected.
Array log_condition_number(const Array& u, double rank_tol = 1e-9, double grad_sigma_floor = 0.0);

}  // namespace d2loc::nd
