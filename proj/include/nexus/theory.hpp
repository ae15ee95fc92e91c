#pragma once
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nexus/matrix.hpp"
#include "nexus/rng.hpp"

namespace nexus {

// One bottleneck experiment: inputs X, a target attention matrix A, and (for
// counterexample instances) the direction a that no linear Q/K map can
// produce as a log-attention row when d < n - 1.
struct BottleneckInstance {
    Matrix X;              // n x d inputs
    std::vector<double> a; // length n, normalized so sum(exp(a)) = 1
    Matrix A;              // n x n row-stochastic target
    int d_k = 0;
};

struct BottleneckReport {
    double reconstruction_error = -1.0;   // low-rank recovery path only
    double target_residual = -1.0;        // rho_a = span_residual(a, [X | 1])
    double achievable_residual_max = -1.0;// worst random linear log-row vs span
    double fit_row_error = -1.0;          // ||log row_1(fit) - a||_2 after GD
    double escape_residual = -1.0;        // higher-order demo log-row vs span
    bool lower_bound_ok = false;          // fit_row_error >= rho_a - 1e-8
};

// A = softmax_rows(U V^T) with U, V n x r Gaussian; row-normalization adds a
// rank-1 term, so log(A) has numeric rank <= r + 1 (verified internally).
// r = 0 yields the uniform matrix.
Matrix build_lowrank_target(std::size_t n, std::size_t r, Rng& rng);

// Exact recovery: P = sqrt(d_k) * log(A), thin SVD truncated to d_k
// components, Q = U Sigma, K = V, so softmax_rows(Q K^T / sqrt(d_k)) == A.
// Throws ContractError on zero entries (log undefined), RepresentabilityError
// when numeric_rank(P) > d_k, NumericalError if the reconstruction misses A
// by more than 1e-8.
std::pair<Matrix, Matrix> recover_qk_via_svd(const Matrix& A, int d_k);

// Target no linear map can hit: a has a component orthogonal to
// span([X | 1]) (requires d < n - 1), normalized so sum(exp(a)) = 1; every
// row of A is exp(a)^T, hence log(A) = 1 a^T has rank 1.
std::pair<std::vector<double>, Matrix> build_rank1_counterexample(const Matrix& X, Rng& rng);

// Checks both sides of the obstruction: every random linear (W_q, W_k) gives
// a first log-attention row inside span([X | 1]) (residual < 1e-8), the
// target direction a sits outside it (rho_a > 1e-6), and a gradient-descent
// linear fit (500 steps, lr 0.05) cannot get its first log-row closer to a
// than rho_a - 1e-8.
BottleneckReport verify_linear_obstruction(const Matrix& X, const std::vector<double>& a,
                                           const Matrix& A, int d_k, int trials, Rng& rng);

// Same objective with the Q/K streams refined by an order-`order`
// self-refinement before the outer scores. Informational: reports whether the
// fitted log-row escapes span([X | 1]); order = 1 reduces to the linear fit.
BottleneckReport nexus_expressivity_demo(const Matrix& X, const std::vector<double>& a,
                                         const Matrix& A, int d_k, int steps, Rng& rng,
                                         int order = 2);

struct TheorySuite {
    std::string csv; // instance,kind,residual,bound,pass
    bool ok = false; // every non-informational row passed
};

// Low-rank recovery instances plus one counterexample instance with the
// obstruction checks and the higher-order escape demo.
TheorySuite run_theory_suite(std::size_t n, std::size_t d, int d_k, int trials,
                             std::uint64_t seed);

} // namespace nexus
