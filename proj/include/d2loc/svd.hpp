#pragma once

#include <cstddef>
#include <vector>

#include "d2loc/matrix.hpp"

namespace d2loc::nd {

struct SvdResult {
    std::vector<double> singular_values;  // non-increasing, all >= 0
    Matrix left_vectors;                  // m x p, column-orthonormal, p = min(m, n)
    Matrix right_vectors;                 // n x p, column-orthonormal
    std::size_t numerical_rank = 0;       // #{sigma_i > rank_tol * sigma_1}; 0 only for the zero matrix

    double condition_number() const;  // sigma_1 / sigma_rank
};

// One-sided Jacobi SVD for small matrices (both dimensions up to a few
// hundred). Throws NumericError on non-finite entries.
SvdResult svd_small(const Matrix& u, double rank_tol = 1e-9);

// |det| via LU with partial pivoting. Kept deliberately independent of the SVD
// path so the two can cross-check each other.
double abs_det(const Matrix& u);

}  // namespace d2loc::nd
