#include "nexus/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace nexus {

namespace {

double col_dot(const Matrix& w, std::size_t p, std::size_t q) {
    double s = 0.0;
    for (std::size_t i = 0; i < w.rows; ++i) s += w(i, p) * w(i, q);
    return s;
}

// One-sided Jacobi on the columns of w (rows >= cols assumed by the caller).
// v accumulates the right rotations starting from identity.
void jacobi_orthogonalize(Matrix& w, Matrix& v) {
    const std::size_t n = w.cols;
    const int max_sweeps = 60;
    const double tol = 1e-15;
    // Right rotations preserve the Frobenius norm, so this absolute cutoff is
    // valid for every sweep. Without it, rank-deficient inputs cycle forever:
    // the numerically-zero columns carry rounding noise whose correlation
    // never drops below the purely relative threshold.
    double fro2 = 0.0;
    for (double x : w.data) fro2 += x * x;
    const double abs_tol = 1e-28 * fro2;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double alpha = col_dot(w, p, p);
                const double beta = col_dot(w, q, q);
                const double gamma = col_dot(w, p, q);
                if (std::fabs(gamma) <= tol * std::sqrt(alpha * beta) ||
                    std::fabs(gamma) <= abs_tol)
                    continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = (zeta >= 0 ? 1.0 : -1.0) /
                                 (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (std::size_t i = 0; i < w.rows; ++i) {
                    const double wp = w(i, p), wq = w(i, q);
                    w(i, p) = c * wp - s * wq;
                    w(i, q) = s * wp + c * wq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vp = v(i, p), vq = v(i, q);
                    v(i, p) = c * vp - s * vq;
                    v(i, q) = s * vp + c * vq;
                }
            }
        }
        if (!rotated) return;
    }
    throw NumericalError("svd_thin: Jacobi sweeps did not converge");
}

// Fill any zero-norm columns of u with vectors orthonormal to the rest, so
// u^T u == I even for rank-deficient input.
void complete_orthonormal(Matrix& u, const std::vector<std::size_t>& zero_cols) {
    for (std::size_t j : zero_cols) {
        for (std::size_t cand = 0; cand < u.rows; ++cand) {
            std::vector<double> e(u.rows, 0.0);
            e[cand] = 1.0;
            for (std::size_t c = 0; c < u.cols; ++c) {
                if (c == j) continue;
                double d = 0.0;
                for (std::size_t i = 0; i < u.rows; ++i) d += u(i, c) * e[i];
                for (std::size_t i = 0; i < u.rows; ++i) e[i] -= d * u(i, c);
            }
            double nrm = 0.0;
            for (double x : e) nrm += x * x;
            nrm = std::sqrt(nrm);
            if (nrm > 0.5) {
                for (std::size_t i = 0; i < u.rows; ++i) u(i, j) = e[i] / nrm;
                break;
            }
        }
    }
}

SvdResult svd_tall(const Matrix& m) { // rows >= cols
    Matrix w = m;
    Matrix v = Matrix::identity(m.cols);
    jacobi_orthogonalize(w, v);

    const std::size_t r = m.cols;
    std::vector<double> sigma(r);
    for (std::size_t j = 0; j < r; ++j) sigma[j] = std::sqrt(col_dot(w, j, j));

    std::vector<std::size_t> order(r);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });

    SvdResult res;
    res.u = Matrix(m.rows, r);
    res.v = Matrix(m.cols, r);
    res.sigma.resize(r);
    // Columns at the rounding-noise floor carry no direction information:
    // normalizing them would produce junk u columns that are far from
    // orthogonal to the rest. Snap them to exactly zero and fill u by basis
    // completion instead.
    const double floor = 1e-12 * sigma[order[0]];
    std::vector<std::size_t> zero_cols;
    for (std::size_t j = 0; j < r; ++j) {
        const std::size_t src = order[j];
        if (sigma[src] > floor && sigma[src] > 0.0) {
            res.sigma[j] = sigma[src];
            for (std::size_t i = 0; i < m.rows; ++i) res.u(i, j) = w(i, src) / sigma[src];
        } else {
            res.sigma[j] = 0.0;
            zero_cols.push_back(j);
        }
        for (std::size_t i = 0; i < m.cols; ++i) res.v(i, j) = v(i, src);
    }
    complete_orthonormal(res.u, zero_cols);
    return res;
}

} // namespace

SvdResult svd_thin(const Matrix& m) {
    contract(m.rows > 0 && m.cols > 0, "svd_thin: empty matrix");
    contract(m.all_finite(), "svd_thin: non-finite entries");
    contract(std::min(m.rows, m.cols) <= 64, "svd_thin: matrix too large for Jacobi path");
    if (m.rows >= m.cols) return svd_tall(m);
    // A = (A^T)^T: swap the roles of u and v.
    SvdResult t = svd_tall(transpose(m));
    return SvdResult{std::move(t.v), std::move(t.sigma), std::move(t.u)};
}

std::size_t numeric_rank(const Matrix& m, double tol) {
    const SvdResult s = svd_thin(m);
    if (s.sigma.empty() || s.sigma[0] == 0.0) return 0;
    const double cut = tol * s.sigma[0];
    std::size_t r = 0;
    while (r < s.sigma.size() && s.sigma[r] > cut) ++r;
    return r;
}

double span_residual(std::span<const double> v, const Matrix& basis) {
    contract(v.size() == basis.rows, "span_residual: length mismatch");
    contract(!v.empty(), "span_residual: empty vector");
    const SvdResult s = svd_thin(basis);
    std::size_t r = 0;
    if (!s.sigma.empty() && s.sigma[0] > 0.0) {
        const double cut = 1e-9 * s.sigma[0];
        while (r < s.sigma.size() && s.sigma[r] > cut) ++r;
    }
    // residual = v - U_r (U_r^T v)
    std::vector<double> res(v.begin(), v.end());
    for (std::size_t j = 0; j < r; ++j) {
        double d = 0.0;
        for (std::size_t i = 0; i < basis.rows; ++i) d += s.u(i, j) * v[i];
        for (std::size_t i = 0; i < basis.rows; ++i) res[i] -= d * s.u(i, j);
    }
    double nrm = 0.0;
    for (double x : res) nrm += x * x;
    return std::sqrt(nrm);
}

} // namespace nexus
