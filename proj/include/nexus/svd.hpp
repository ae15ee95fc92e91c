#pragma once
#include <span>
#include <vector>

#include "nexus/matrix.hpp"

namespace nexus {

// Thin SVD of an n x m matrix: u is n x r, v is m x r, r = min(n, m),
// input == u * diag(sigma) * v^T. sigma sorted descending.
struct SvdResult {
    Matrix u;
    std::vector<double> sigma;
    Matrix v;
};

// One-sided Jacobi SVD. Intended for small dense matrices (min dim <= 64).
// Throws NumericalError if the sweep cap is reached without convergence.
SvdResult svd_thin(const Matrix& m);

// Number of singular values > tol * sigma_max.
std::size_t numeric_rank(const Matrix& m, double tol = 1e-9);

// Euclidean norm of v minus its orthogonal projection onto the column span
// of basis (projection built from the numerically nonzero singular vectors).
double span_residual(std::span<const double> v, const Matrix& basis);

} // namespace nexus
