#include "d2loc/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include "d2loc/errors.hpp"
#include "d2loc/svd.hpp"

namespace d2loc::nd {

namespace {

bool any_requires_grad(const std::vector<Array>& parents) {
    for (const auto& p : parents)
        if (p.requires_grad()) return true;
    return false;
}

void check_same_shape(const Array& a, const Array& b, const char* op) {
    if (!a.values().same_shape(b.values()))
        throw ShapeError(std::string(op) + " operands differ in shape");
}

bool is_vector(const Array& x) { return x.rows() == 1 || x.cols() == 1; }

}  // namespace

Array Array::leaf(Matrix values, bool requires_grad) {
    Array a;
    a.node_ = std::make_shared<Node>();
    a.node_->grad = Matrix(values.rows(), values.cols());
    a.node_->values = std::move(values);
    a.node_->requires_grad = requires_grad;
    return a;
}

Array Array::scalar(double v) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return leaf(std::move(m), false);
}

double Array::item() const {
    if (rows() != 1 || cols() != 1) throw UsageError("item() on a non-scalar array");
    return node_->values(0, 0);
}

Array Array::from_op(Matrix values, std::vector<Array> parents, BackwardFn backprop) {
    Array a;
    a.node_ = std::make_shared<Node>();
    a.node_->grad = Matrix(values.rows(), values.cols());
    a.node_->values = std::move(values);
    a.node_->requires_grad = any_requires_grad(parents);
    a.node_->parents.reserve(parents.size());
    for (auto& p : parents) a.node_->parents.push_back(NodePtr(p.node_));
    a.node_->backprop = std::move(backprop);
    return a;
}

void backward(const Array& root) {
    if (!root.defined() || root.rows() != 1 || root.cols() != 1)
        throw UsageError("backward root must be a defined 1x1 scalar");

    // Iterative post-order DFS: parents land before their consumers.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    visited.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    std::unordered_map<Node*, std::size_t> index;
    index.reserve(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) index[order[i]] = i;

    std::vector<Matrix> adjoint(order.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        adjoint[i] = Matrix(order[i]->values.rows(), order[i]->values.cols());
    adjoint[index[root.node()]](0, 0) = 1.0;

    for (std::size_t i = order.size(); i-- > 0;) {
        Node* node = order[i];
        if (!node->requires_grad || !node->backprop) continue;
        std::vector<Matrix*> parent_adj(node->parents.size(), nullptr);
        for (std::size_t p = 0; p < node->parents.size(); ++p)
            if (node->parents[p]->requires_grad) parent_adj[p] = &adjoint[index[node->parents[p].get()]];
        node->backprop(*node, adjoint[i], parent_adj);
    }

    for (std::size_t i = 0; i < order.size(); ++i)
        if (order[i]->requires_grad) order[i]->grad.add_scaled(adjoint[i], 1.0);
}

// --- elementwise ------------------------------------------------------------

Array add(const Array& a, const Array& b) {
    check_same_shape(a, b, "add");
    Matrix out = a.values();
    out.add_scaled(b.values(), 1.0);
    return Array::from_op(std::move(out), {a, b},
                          [](const Node&, const Matrix& g, const std::vector<Matrix*>& pa) {
                              if (pa[0]) pa[0]->add_scaled(g, 1.0);
                              if (pa[1]) pa[1]->add_scaled(g, 1.0);
                          });
}

Array sub(const Array& a, const Array& b) {
    check_same_shape(a, b, "sub");
    Matrix out = a.values();
    out.add_scaled(b.values(), -1.0);
    return Array::from_op(std::move(out), {a, b},
                          [](const Node&, const Matrix& g, const std::vector<Matrix*>& pa) {
                              if (pa[0]) pa[0]->add_scaled(g, 1.0);
                              if (pa[1]) pa[1]->add_scaled(g, -1.0);
                          });
}

Array mul(const Array& a, const Array& b) {
    check_same_shape(a, b, "mul");
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    return Array::from_op(std::move(out), {a, b},
                          [](const Node& self, const Matrix& g, const std::vector<Matrix*>& pa) {
                              const Matrix& av = self.parents[0]->values;
                              const Matrix& bv = self.parents[1]->values;
                              if (pa[0])
                                  for (std::size_t i = 0; i < g.size(); ++i) (*pa[0])[i] += g[i] * bv[i];
                              if (pa[1])
                                  for (std::size_t i = 0; i < g.size(); ++i) (*pa[1])[i] += g[i] * av[i];
                          });
}

Array affine(const Array& a, double scale, double shift) {
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * a.values()[i] + shift;
    return Array::from_op(std::move(out), {a},
                          [scale](const Node&, const Matrix& g, const std::vector<Matrix*>& pa) {
                              if (pa[0]) pa[0]->add_scaled(g, scale);
                          });
}

Array sigmoid(const Array& x) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x.values()[i];
        out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    Matrix saved = out;
    return Array::from_op(std::move(out), {x},
                          [s = std::move(saved)](const Node&, const Matrix& g, const std::vector<Matrix*>& pa) {
                              if (!pa[0]) return;
                              for (std::size_t i = 0; i < g.size(); ++i)
                                  (*pa[0])[i] += g[i] * s[i] * (1.0 - s[i]);
                          });
}

Array leaky_relu(const Array& x, double slope) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x.values()[i];
        out[i] = v >= 0.0 ? v : slope * v;
    }
    return Array::from_op(std::move(out), {x},
                          [slope](const Node& self, const Matrix& g, const std::vector<Matrix*>& pa) {
                              if (!pa[0]) return;
                              const Matrix& xv = self.parents[0]->values;
                              for (std::size_t i = 0; i < g.size(); ++i)
                                  (*pa[0])[i] += g[i] * (xv[i] >= 0.0 ? 1.0 : slope);
                          });
}

Array log(const Array& x) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(x.values()[i]);
    return Array::from_op(std::move(out), {x},
                          [](const Node& self, const Matrix& g, const std::vector<Matrix*>& pa) {
                              if (!pa[0]) return;
                              const Matrix& xv = self.parents[0]->values;
                              for (std::size_t i = 0; i < g.size(); ++i) (*pa[0])[i] += g[i] / xv[i];
                          });
}

Array abs(const Array& x) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(x.values()[i]);
    return Array::from_op(std::move(out), {x},
                          [](const Node& self, const Matrix& g, const std::vector<Matrix*>& pa) {
                              if (!pa[0]) return;
                              const Matrix& xv = self.parents[0]->values;
                              for (std::size_t i = 0; i < g.size(); ++i) {
                                  const double sign = xv[i] > 0.0 ? 1.0 : (xv[i] < 0.0 ? -1.0 : 0.0);
                                  (*pa[0])[i] += g[i] * sign;
                              }
                          });
}

Array pow_scalar(const Array& x, double exponent) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::pow(x.values()[i], exponent);
    return Array::from_op(std::move(out), {x},
                          [exponent](const Node& self, const Matrix& g, const std::vector<Matrix*>& pa) {
                              if (!pa[0] || exponent == 0.0) return;
                              const Matrix& xv = self.parents[0]->values;
                              for (std::size_t i = 0; i < g.size(); ++i)
                                  (*pa[0])[i] += g[i] * exponent * std::pow(xv[i], exponent - 1.0);
                          });
}

Array clamp(const Array& x, double lo, double hi) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, x.values()[i]));
    return Array::from_op(std::move(out), {x},
                          [lo, hi](const Node& self, const Matrix& g, const std::vector<Matrix*>& pa) {
                              if (!pa[0]) return;
                              const Matrix& xv = self.parents[0]->values;
                              for (std::size_t i = 0; i < g.size(); ++i)
                                  if (xv[i] >= lo && xv[i] <= hi) (*pa[0])[i] += g[i];
                          });
}

Array sum(const Array& x) {
    Matrix out(1, 1);
    double s = 0.0;
    for (std::size_t i = 0; i < x.values().size(); ++i) s += x.values()[i];
    out(0, 0) = s;
    return Array::from_op(std::move(out), {x},
                          [](const Node&, const Matrix& g, const std::vector<Matrix*>& pa) {
                              if (!pa[0]) return;
                              for (std::size_t i = 0; i < pa[0]->size(); ++i) (*pa[0])[i] += g(0, 0);
                          });
}

Array mean(const Array& x) {
    const double n = static_cast<double>(x.values().size());
    return affine(sum(x), 1.0 / n, 0.0);
}

// --- structural -------------------------------------------------------------

Array transpose(const Array& x) {
    return Array::from_op(x.values().transposed(), {x},
                          [](const Node&, const Matrix& g, const std::vector<Matrix*>& pa) {
                              if (!pa[0]) return;
                              pa[0]->add_scaled(g.transposed(), 1.0);
                          });
}

Array at(const Array& x, std::size_t r, std::size_t c) {
    if (r >= x.rows() || c >= x.cols()) throw ShapeError("at() index out of range");
    Matrix out(1, 1);
    out(0, 0) = x.values()(r, c);
    return Array::from_op(std::move(out), {x},
                          [r, c](const Node&, const Matrix& g, const std::vector<Matrix*>& pa) {
                              if (pa[0]) (*pa[0])(r, c) += g(0, 0);
                          });
}

Array column(const Array& x, std::size_t c) {
    if (c >= x.cols()) throw ShapeError("column() index out of range");
    Matrix out(x.rows(), 1);
    for (std::size_t r = 0; r < x.rows(); ++r) out(r, 0) = x.values()(r, c);
    return Array::from_op(std::move(out), {x},
                          [c](const Node&, const Matrix& g, const std::vector<Matrix*>& pa) {
                              if (!pa[0]) return;
                              for (std::size_t r = 0; r < g.rows(); ++r) (*pa[0])(r, c) += g(r, 0);
                          });
}

Array gather_rows(const Array& x, std::vector<std::size_t> idx) {
    for (std::size_t i : idx)
        if (i >= x.rows()) throw ShapeError("gather_rows index out of range");
    Matrix out(idx.size(), x.cols());
    for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x.values()(idx[r], c);
    return Array::from_op(std::move(out), {x},
                          [idx = std::move(idx)](const Node&, const Matrix& g, const std::vector<Matrix*>& pa) {
                              if (!pa[0]) return;
                              for (std::size_t r = 0; r < idx.size(); ++r)
                                  for (std::size_t c = 0; c < g.cols(); ++c) (*pa[0])(idx[r], c) += g(r, c);
                          });
}

Array vstack(const Array& a, const Array& b) {
    if (a.cols() != b.cols()) throw ShapeError("vstack operands differ in column count");
    Matrix out(a.rows() + b.rows(), a.cols());
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) out(r, c) = a.values()(r, c);
    for (std::size_t r = 0; r < b.rows(); ++r)
        for (std::size_t c = 0; c < b.cols(); ++c) out(a.rows() + r, c) = b.values()(r, c);
    const std::size_t split = a.rows();
    return Array::from_op(std::move(out), {a, b},
                          [split](const Node&, const Matrix& g, const std::vector<Matrix*>& pa) {
                              if (pa[0])
                                  for (std::size_t r = 0; r < split; ++r)
                                      for (std::size_t c = 0; c < g.cols(); ++c) (*pa[0])(r, c) += g(r, c);
                              if (pa[1])
                                  for (std::size_t r = split; r < g.rows(); ++r)
                                      for (std::size_t c = 0; c < g.cols(); ++c)
                                          (*pa[1])(r - split, c) += g(r, c);
                          });
}

Array hstack(const std::vector<Array>& parts) {
    if (parts.empty()) throw UsageError("hstack of zero arrays");
    const std::size_t rows = parts[0].rows();
    std::size_t cols = 0;
    for (const auto& p : parts) {
        if (p.rows() != rows) throw ShapeError("hstack operands differ in row count");
        cols += p.cols();
    }
    Matrix out(rows, cols);
    std::vector<std::size_t> offsets(parts.size());
    std::size_t off = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        offsets[i] = off;
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < parts[i].cols(); ++c) out(r, off + c) = parts[i].values()(r, c);
        off += parts[i].cols();
    }
    return Array::from_op(std::move(out), parts,
                          [offsets](const Node& self, const Matrix& g, const std::vector<Matrix*>& pa) {
                              for (std::size_t i = 0; i < pa.size(); ++i) {
                                  if (!pa[i]) continue;
                                  const std::size_t w = self.parents[i]->values.cols();
                                  for (std::size_t r = 0; r < g.rows(); ++r)
                                      for (std::size_t c = 0; c < w; ++c)
                                          (*pa[i])(r, c) += g(r, offsets[i] + c);
                              }
                          });
}

Array detach(const Array& x) { return Array::leaf(x.values(), false); }

// --- linear algebra ---------------------------------------------------------

Array matmul(const Array& a, const Array& b) {
    Matrix out = matmul_values(a.values(), b.values());
    return Array::from_op(std::move(out), {a, b},
                          [](const Node& self, const Matrix& g, const std::vector<Matrix*>& pa) {
                              const Matrix& av = self.parents[0]->values;
                              const Matrix& bv = self.parents[1]->values;
                              if (pa[0]) pa[0]->add_scaled(matmul_values(g, bv.transposed()), 1.0);
                              if (pa[1]) pa[1]->add_scaled(matmul_values(av.transposed(), g), 1.0);
                          });
}

Array conv1d_temporal(const Array& input, const Array& kernel, const Array& bias,
                      std::size_t kernel_size, std::size_t dilation) {
    if (kernel_size % 2 == 0) throw ConfigError("conv1d kernel_size must be odd");
    if (dilation < 1) throw ConfigError("conv1d dilation must be >= 1");
    const std::size_t s = input.rows();
    const std::size_t c_in = input.cols();
    const std::size_t c_out = kernel.cols();
    if (kernel.rows() != kernel_size * c_in)
        throw ShapeError("conv1d kernel rows must equal kernel_size * c_in");
    if (bias.rows() != 1 || bias.cols() != c_out) throw ShapeError("conv1d bias must be 1 x c_out");

    const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(kernel_size - 1) / 2;
    Matrix out(s, c_out);
    for (std::size_t t = 0; t < s; ++t) {
        double* orow = out.data() + t * c_out;
        for (std::size_t o = 0; o < c_out; ++o) orow[o] = bias.values()(0, o);
        for (std::size_t j = 0; j < kernel_size; ++j) {
            const std::ptrdiff_t tt =
                static_cast<std::ptrdiff_t>(t) + (static_cast<std::ptrdiff_t>(j) - half) * static_cast<std::ptrdiff_t>(dilation);
            if (tt < 0 || tt >= static_cast<std::ptrdiff_t>(s)) continue;
            const double* irow = input.values().data() + static_cast<std::size_t>(tt) * c_in;
            const double* krows = kernel.values().data() + j * c_in * c_out;
            for (std::size_t i = 0; i < c_in; ++i) {
                const double iv = irow[i];
                if (iv == 0.0) continue;
                const double* krow = krows + i * c_out;
                for (std::size_t o = 0; o < c_out; ++o) orow[o] += iv * krow[o];
            }
        }
    }

    return Array::from_op(
        std::move(out), {input, kernel, bias},
        [kernel_size, dilation, half](const Node& self, const Matrix& g, const std::vector<Matrix*>& pa) {
            const Matrix& iv = self.parents[0]->values;
            const Matrix& kv = self.parents[1]->values;
            const std::size_t s = iv.rows();
            const std::size_t c_in = iv.cols();
            const std::size_t c_out = kv.cols();
            for (std::size_t t = 0; t < s; ++t) {
                const double* grow = g.data() + t * c_out;
                if (pa[2]) {
                    double* brow = pa[2]->data();
                    for (std::size_t o = 0; o < c_out; ++o) brow[o] += grow[o];
                }
                for (std::size_t j = 0; j < kernel_size; ++j) {
                    const std::ptrdiff_t tt = static_cast<std::ptrdiff_t>(t) +
                                              (static_cast<std::ptrdiff_t>(j) - half) *
                                                  static_cast<std::ptrdiff_t>(dilation);
                    if (tt < 0 || tt >= static_cast<std::ptrdiff_t>(s)) continue;
                    const std::size_t ut = static_cast<std::size_t>(tt);
                    for (std::size_t i = 0; i < c_in; ++i) {
                        const double* krow = kv.data() + (j * c_in + i) * c_out;
                        if (pa[0]) {
                            double acc = 0.0;
                            for (std::size_t o = 0; o < c_out; ++o) acc += grow[o] * krow[o];
                            (*pa[0])(ut, i) += acc;
                        }
                        if (pa[1]) {
                            double* kg = pa[1]->data() + (j * c_in + i) * c_out;
                            const double ivv = iv(ut, i);
                            if (ivv != 0.0)
                                for (std::size_t o = 0; o < c_out; ++o) kg[o] += ivv * grow[o];
                        }
                    }
                }
            }
        });
}

Array cosine(const Array& a, const Array& b) {
    check_same_shape(a, b, "cosine");
    if (!is_vector(a)) throw ShapeError("cosine expects vector-shaped arrays");
    const Matrix& av = a.values();
    const Matrix& bv = b.values();
    double dot = 0.0, na2 = 0.0, nb2 = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        dot += av[i] * bv[i];
        na2 += av[i] * av[i];
        nb2 += bv[i] * bv[i];
    }
    const double na = std::sqrt(na2), nb = std::sqrt(nb2);
    if (na < 1e-12 || nb < 1e-12) return Array::scalar(0.0);  // zero-norm guard

    const double value = dot / (na * nb);
    Matrix out(1, 1);
    out(0, 0) = value;
    return Array::from_op(std::move(out), {a, b},
                          [na, nb, value](const Node& self, const Matrix& g, const std::vector<Matrix*>& pa) {
                              const Matrix& av = self.parents[0]->values;
                              const Matrix& bv = self.parents[1]->values;
                              const double gs = g(0, 0);
                              if (pa[0])
                                  for (std::size_t i = 0; i < av.size(); ++i)
                                      (*pa[0])[i] += gs * (bv[i] / (na * nb) - value * av[i] / (na * na));
                              if (pa[1])
                                  for (std::size_t i = 0; i < bv.size(); ++i)
                                      (*pa[1])[i] += gs * (av[i] / (na * nb) - value * bv[i] / (nb * nb));
                          });
}

Array topk_mean(const Array& x, std::size_t k) {
    if (!is_vector(x)) throw ShapeError("topk_mean expects a vector");
    const std::size_t n = x.values().size();
    if (k < 1 || k > n) throw ConfigError("topk_mean k out of range [1, s]");

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) {
        return x.values()[i] > x.values()[j];  // stable: lowest index wins ties
    });
    idx.resize(k);

    double s = 0.0;
    for (std::size_t i : idx) s += x.values()[i];
    Matrix out(1, 1);
    out(0, 0) = s / static_cast<double>(k);
    return Array::from_op(std::move(out), {x},
                          [idx = std::move(idx), k](const Node&, const Matrix& g, const std::vector<Matrix*>& pa) {
                              if (!pa[0]) return;
                              const double share = g(0, 0) / static_cast<double>(k);
                              for (std::size_t i : idx) (*pa[0])[i] += share;
                          });
}

Array row_max(const Array& x) {
    if (x.cols() == 0 || x.rows() == 0) throw ShapeError("row_max of an empty matrix");
    Matrix out(x.rows(), 1);
    std::vector<std::size_t> argmax(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < x.cols(); ++c)
            if (x.values()(r, c) > x.values()(r, best)) best = c;
        argmax[r] = best;
        out(r, 0) = x.values()(r, best);
    }
    return Array::from_op(std::move(out), {x},
                          [argmax = std::move(argmax)](const Node&, const Matrix& g, const std::vector<Matrix*>& pa) {
                              if (!pa[0]) return;
                              for (std::size_t r = 0; r < g.rows(); ++r) (*pa[0])(r, argmax[r]) += g(r, 0);
                          });
}

Array log_condition_number(const Array& u, double rank_tol, double grad_sigma_floor) {
    const SvdResult svd = svd_small(u.values(), rank_tol);
    if (svd.numerical_rank == 0) throw NumericError("log_condition_number of the zero matrix");
    const std::size_t r = svd.numerical_rank - 1;
    const double s1 = svd.singular_values[0];
    const double sr = svd.singular_values[r];
    Matrix out(1, 1);
    out(0, 0) = std::log(s1 / sr);

    // 1/sigma_r blows up on the near-rank-deficient joints that uninformative
    // early predictions produce; the floor bounds the backward factor while
    // keeping the gradient exact wherever the condition number stays below
    // 1/grad_sigma_floor.
    const double sr_grad = std::max(sr, grad_sigma_floor * s1);

    const bool degenerate = (s1 - sr) < 1e-9 * s1;
    Matrix dvalue(u.rows(), u.cols());
    if (!degenerate) {
        // d(log s1 - log sr)/dU via ds_i/dU = u_i v_i^T
        for (std::size_t i = 0; i < u.rows(); ++i)
            for (std::size_t j = 0; j < u.cols(); ++j)
                dvalue(i, j) = svd.left_vectors(i, 0) * svd.right_vectors(j, 0) / s1 -
                               svd.left_vectors(i, r) * svd.right_vectors(j, r) / sr_grad;
    }
    return Array::from_op(std::move(out), {u},
                          [dvalue = std::move(dvalue)](const Node&, const Matrix& g, const std::vector<Matrix*>& pa) {
                              if (!pa[0]) return;
                              pa[0]->add_scaled(dvalue, g(0, 0));
                          });
}

}  // namespace d2loc::nd
