#include "d2loc/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "d2loc/errors.hpp"

namespace d2loc::nd {

namespace {

// Hestenes one-sided Jacobi on the columns of a (m x n, m >= n). Produces
// a = U * diag(sigma) implicitly; v accumulates the right rotations.
void jacobi_orthogonalize(Matrix& a, Matrix& v) {
    const std::size_t n = a.cols();
    const std::size_t m = a.rows();
    constexpr double kTol = 1e-12;  // on normalized off-diagonal mass
    constexpr int kMaxSweeps = 60;

    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                double alpha = 0.0, beta = 0.0, gamma = 0.0;
                for (std::size_t r = 0; r < m; ++r) {
                    const double ai = a(r, i), aj = a(r, j);
                    alpha += ai * ai;
                    beta += aj * aj;
                    gamma += ai * aj;
                }
                if (alpha == 0.0 || beta == 0.0) continue;
                if (std::abs(gamma) <= kTol * std::sqrt(alpha * beta)) continue;

                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double cs = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = cs * t;
                for (std::size_t r = 0; r < m; ++r) {
                    const double ai = a(r, i), aj = a(r, j);
                    a(r, i) = cs * ai - sn * aj;
                    a(r, j) = sn * ai + cs * aj;
                }
                for (std::size_t r = 0; r < n; ++r) {
                    const double vi = v(r, i), vj = v(r, j);
                    v(r, i) = cs * vi - sn * vj;
                    v(r, j) = sn * vi + cs * vj;
                }
                rotated = true;
            }
        }
        if (!rotated) break;
    }
}

// Fill zero-norm columns of u with vectors orthonormal to the existing ones so
// left_vectors stays column-orthonormal even for rank-deficient input.
void complete_orthonormal(Matrix& u, std::size_t first_empty) {
    const std::size_t m = u.rows();
    const std::size_t p = u.cols();
    std::size_t basis = 0;
    for (std::size_t c = first_empty; c < p; ++c) {
        while (basis < m) {
            std::vector<double> cand(m, 0.0);
            cand[basis++] = 1.0;
            for (std::size_t k = 0; k < c; ++k) {
                double dot = 0.0;
                for (std::size_t r = 0; r < m; ++r) dot += cand[r] * u(r, k);
                for (std::size_t r = 0; r < m; ++r) cand[r] -= dot * u(r, k);
            }
            double norm = 0.0;
            for (double x : cand) norm += x * x;
            norm = std::sqrt(norm);
            if (norm > 1e-8) {
                for (std::size_t r = 0; r < m; ++r) u(r, c) = cand[r] / norm;
                break;
            }
        }
    }
}

}  // namespace

double SvdResult::condition_number() const {
    if (numerical_rank == 0) throw NumericError("condition number of the zero matrix");
    return singular_values[0] / singular_values[numerical_rank - 1];
}

SvdResult svd_small(const Matrix& input, double rank_tol) {
    if (input.rows() == 0 || input.cols() == 0) throw ShapeError("svd of an empty matrix");
    if (!input.all_finite()) throw NumericError("svd input has non-finite entries");

    // Work on the tall orientation; swap factors back afterwards.
    const bool transposed = input.rows() < input.cols();
    Matrix a = transposed ? input.transposed() : input;
    const std::size_t m = a.rows();
    const std::size_t n = a.cols();

    Matrix v = Matrix::identity(n);
    jacobi_orthogonalize(a, v);

    std::vector<double> sigma(n);
    for (std::size_t c = 0; c < n; ++c) {
        double s = 0.0;
        for (std::size_t r = 0; r < m; ++r) s += a(r, c) * a(r, c);
        sigma[c] = std::sqrt(s);
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

    SvdResult res;
    res.singular_values.resize(n);
    res.left_vectors = Matrix(m, n);
    res.right_vectors = Matrix(n, n);
    // Columns whose norm sits at round-off level carry no usable direction;
    // normalizing them would amplify noise, so they are filled orthonormally.
    const double empty_tol = 1e-14 * sigma[order[0]];
    std::size_t first_empty = n;
    for (std::size_t c = 0; c < n; ++c) {
        const std::size_t src = order[c];
        res.singular_values[c] = sigma[src];
        for (std::size_t r = 0; r < n; ++r) res.right_vectors(r, c) = v(r, src);
        if (sigma[src] > empty_tol) {
            for (std::size_t r = 0; r < m; ++r) res.left_vectors(r, c) = a(r, src) / sigma[src];
        } else if (first_empty == n) {
            first_empty = c;
        }
    }
    if (first_empty < n) complete_orthonormal(res.left_vectors, first_empty);

    if (transposed) std::swap(res.left_vectors, res.right_vectors);

    const double s1 = res.singular_values.empty() ? 0.0 : res.singular_values[0];
    res.numerical_rank = 0;
    if (s1 > 0.0) {
        for (double s : res.singular_values)
            if (s > rank_tol * s1) ++res.numerical_rank;
    }
    return res;
}

double abs_det(const Matrix& input) {
    if (input.rows() != input.cols()) throw ShapeError("abs_det requires a square matrix");
    const std::size_t n = input.rows();
    Matrix a = input;
    double det = 1.0;
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        double best = std::abs(a(col, col));
        for (std::size_t r = col + 1; r < n; ++r) {
            if (std::abs(a(r, col)) > best) {
                best = std::abs(a(r, col));
                pivot = r;
            }
        }
        if (best == 0.0) return 0.0;
        if (pivot != col)
            for (std::size_t c = 0; c < n; ++c) std::swap(a(pivot, c), a(col, c));
        det *= a(col, col);
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a(r, col) / a(col, col);
            if (f == 0.0) continue;
            for (std::size_t c = col; c < n; ++c) a(r, c) -= f * a(col, c);
        }
    }
    return std::abs(det);
}

}  // namespace d2loc::nd
