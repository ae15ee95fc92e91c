#pragma once
#include <cstdint>
#include <span>

#include "nexus/matrix.hpp"

namespace nexus {

// Global switch for the OpenMP paths. Off means every kernel runs the serial
// code path. The parallel schedules split work by output row only, so both
// paths perform identical per-element arithmetic and produce bit-identical
// results; tests rely on that.
void set_parallel(bool on);
bool parallel_enabled();

// Instrumented floating-point multiply/add accounting for the kernels below.
// Thread-local so concurrent callers do not race.
void flop_counter_reset();
std::uint64_t flop_counter_read();

Matrix matmul(const Matrix& a, const Matrix& b);     // a * b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a * b^T
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T * b

Matrix scaled(const Matrix& a, double s);

// Sets entries strictly above the diagonal to -inf (the softmax zero sentinel).
void apply_causal_mask(Matrix& scores);

// Numerically stable log(sum(exp(v))). -inf entries contribute zero mass.
double logsumexp(std::span<const double> v);

// Row-wise softmax. -inf entries map to exact 0; a fully masked row is a
// contract violation.
Matrix softmax_rows(const Matrix& m);
Matrix log_softmax_rows(const Matrix& m);

// Per-row layer normalization with learned gain/shift (1 x cols each).
Matrix layernorm_rows(const Matrix& x, const Matrix& gamma, const Matrix& beta,
                      double eps = 1e-5);

// Exact erf-based GELU, applied elementwise.
Matrix gelu(const Matrix& x);

namespace ref {
// Serial reference implementations, kept independent of the OpenMP kernels so
// the two can be checked against each other (see tools/kernel_bench.cpp).
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix softmax_rows(const Matrix& m);
Matrix layernorm_rows(const Matrix& x, const Matrix& gamma, const Matrix& beta,
                      double eps = 1e-5);
} // namespace ref

} // namespace nexus
