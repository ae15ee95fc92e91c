#include "nexus/kernels.hpp"

#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>

namespace nexus {

namespace {
std::atomic<bool> g_parallel{true};
thread_local std::uint64_t g_flops = 0;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
} // namespace

void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }
bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }

void flop_counter_reset() { g_flops = 0; }
std::uint64_t flop_counter_read() { return g_flops; }

// Each output row is one unit of parallel work; within a row the k loop runs
// in ascending order, so serial and parallel schedules sum in the same order.
static void matmul_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
    double* crow = c.row_ptr(i);
    for (std::size_t k = 0; k < a.cols; ++k) {
        const double aik = a(i, k);
        const double* brow = b.row_ptr(k);
        for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
    }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    contract(a.cols == b.rows, "matmul: inner dimension mismatch");
    Matrix c(a.rows, b.cols);
    const std::int64_t n = static_cast<std::int64_t>(a.rows);
#pragma omp parallel for if (parallel_enabled()) schedule(static)
    for (std::int64_t i = 0; i < n; ++i) matmul_row(a, b, c, static_cast<std::size_t>(i));
    g_flops += 2ull * a.rows * a.cols * b.cols;
    return c;
}

static void matmul_nt_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
    const double* arow = a.row_ptr(i);
    for (std::size_t j = 0; j < b.rows; ++j) {
        const double* brow = b.row_ptr(j);
        double s = 0.0;
        for (std::size_t k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
        c(i, j) = s;
    }
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    contract(a.cols == b.cols, "matmul_nt: inner dimension mismatch");
    Matrix c(a.rows, b.rows);
    const std::int64_t n = static_cast<std::int64_t>(a.rows);
#pragma omp parallel for if (parallel_enabled()) schedule(static)
    for (std::int64_t i = 0; i < n; ++i) matmul_nt_row(a, b, c, static_cast<std::size_t>(i));
    g_flops += 2ull * a.rows * a.cols * b.rows;
    return c;
}

static void matmul_tn_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
    double* crow = c.row_ptr(i);
    for (std::size_t k = 0; k < a.rows; ++k) {
        const double aki = a(k, i);
        const double* brow = b.row_ptr(k);
        for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aki * brow[j];
    }
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    contract(a.rows == b.rows, "matmul_tn: inner dimension mismatch");
    Matrix c(a.cols, b.cols);
    const std::int64_t n = static_cast<std::int64_t>(a.cols);
#pragma omp parallel for if (parallel_enabled()) schedule(static)
    for (std::int64_t i = 0; i < n; ++i) matmul_tn_row(a, b, c, static_cast<std::size_t>(i));
    g_flops += 2ull * a.cols * a.rows * b.cols;
    return c;
}

Matrix scaled(const Matrix& a, double s) {
    Matrix c = a;
    for (double& v : c.data) v *= s;
    g_flops += a.size();
    return c;
}

void apply_causal_mask(Matrix& scores) {
    contract(scores.rows == scores.cols, "apply_causal_mask: matrix must be square");
    for (std::size_t i = 0; i < scores.rows; ++i)
        for (std::size_t j = i + 1; j < scores.cols; ++j) scores(i, j) = kNegInf;
}

double logsumexp(std::span<const double> v) {
    contract(!v.empty(), "logsumexp: empty input");
    double m = kNegInf;
    for (double x : v) {
        contract(!(x > 0 && std::isinf(x)) && !std::isnan(x), "logsumexp: invalid entry");
        m = std::max(m, x);
    }
    if (m == kNegInf) return kNegInf;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

static void softmax_row(const Matrix& m, Matrix& out, std::size_t i) {
    const double* src = m.row_ptr(i);
    double* dst = out.row_ptr(i);
    double mx = kNegInf;
    for (std::size_t j = 0; j < m.cols; ++j) mx = std::max(mx, src[j]);
    contract(mx != kNegInf, "softmax_rows: fully masked row");
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) {
        dst[j] = std::exp(src[j] - mx); // exp(-inf) == 0 exactly
        s += dst[j];
    }
    const double inv = 1.0 / s;
    for (std::size_t j = 0; j < m.cols; ++j) dst[j] *= inv;
}

Matrix softmax_rows(const Matrix& m) {
    contract(m.rows > 0 && m.cols > 0, "softmax_rows: empty matrix");
    Matrix out(m.rows, m.cols);
    const std::int64_t n = static_cast<std::int64_t>(m.rows);
    // Contract violations (fully masked rows) must not unwind out of the
    // parallel region, so they are captured and rethrown after the join.
    std::exception_ptr failed = nullptr;
#pragma omp parallel for if (parallel_enabled()) schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        try {
            softmax_row(m, out, static_cast<std::size_t>(i));
        } catch (...) {
#pragma omp critical(nexus_softmax_rows_err)
            if (!failed) failed = std::current_exception();
        }
    }
    if (failed) std::rethrow_exception(failed);
    g_flops += 5ull * m.rows * m.cols;
    return out;
}

Matrix log_softmax_rows(const Matrix& m) {
    contract(m.rows > 0 && m.cols > 0, "log_softmax_rows: empty matrix");
    Matrix out(m.rows, m.cols);
    const std::int64_t n = static_cast<std::int64_t>(m.rows);
    std::exception_ptr failed = nullptr;
#pragma omp parallel for if (parallel_enabled()) schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        try {
            const std::size_t r = static_cast<std::size_t>(i);
            const double lse = logsumexp(std::span<const double>(m.row_ptr(r), m.cols));
            for (std::size_t j = 0; j < m.cols; ++j) out(r, j) = m(r, j) - lse;
        } catch (...) {
#pragma omp critical(nexus_log_softmax_rows_err)
            if (!failed) failed = std::current_exception();
        }
    }
    if (failed) std::rethrow_exception(failed);
    g_flops += 5ull * m.rows * m.cols;
    return out;
}

static void layernorm_row(const Matrix& x, const Matrix& gamma, const Matrix& beta,
                          double eps, Matrix& out, std::size_t i) {
    const double* src = x.row_ptr(i);
    double* dst = out.row_ptr(i);
    const std::size_t c = x.cols;
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += src[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
        const double d = src[j] - mean;
        var += d * d;
    }
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j)
        dst[j] = (src[j] - mean) * inv * gamma.data[j] + beta.data[j];
}

Matrix layernorm_rows(const Matrix& x, const Matrix& gamma, const Matrix& beta, double eps) {
    contract(gamma.rows == 1 && gamma.cols == x.cols, "layernorm_rows: bad gamma shape");
    contract(beta.rows == 1 && beta.cols == x.cols, "layernorm_rows: bad beta shape");
    Matrix out(x.rows, x.cols);
    const std::int64_t n = static_cast<std::int64_t>(x.rows);
#pragma omp parallel for if (parallel_enabled()) schedule(static)
    for (std::int64_t i = 0; i < n; ++i)
        layernorm_row(x, gamma, beta, eps, out, static_cast<std::size_t>(i));
    return out;
}

Matrix gelu(const Matrix& x) {
    Matrix out = x;
    for (double& v : out.data) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
    return out;
}

namespace ref {

Matrix matmul(const Matrix& a, const Matrix& b) {
    contract(a.cols == b.rows, "matmul: inner dimension mismatch");
    Matrix c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) matmul_row(a, b, c, i);
    return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    contract(a.cols == b.cols, "matmul_nt: inner dimension mismatch");
    Matrix c(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) matmul_nt_row(a, b, c, i);
    return c;
}

Matrix softmax_rows(const Matrix& m) {
    contract(m.rows > 0 && m.cols > 0, "softmax_rows: empty matrix");
    Matrix out(m.rows, m.cols);
    for (std::size_t i = 0; i < m.rows; ++i) softmax_row(m, out, i);
    return out;
}

Matrix layernorm_rows(const Matrix& x, const Matrix& gamma, const Matrix& beta, double eps) {
    contract(gamma.rows == 1 && gamma.cols == x.cols, "layernorm_rows: bad gamma shape");
    contract(beta.rows == 1 && beta.cols == x.cols, "layernorm_rows: bad beta shape");
    Matrix out(x.rows, x.cols);
    for (std::size_t i = 0; i < x.rows; ++i) layernorm_row(x, gamma, beta, eps, out, i);
    return out;
}

} // namespace ref

} // namespace nexus
