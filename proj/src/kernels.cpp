#include "mtnat/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#ifdef MTNAT_HAVE_OPENMP
#include <omp.h>
#endif

namespace mtnat::kernels {

namespace {
std::atomic<Backend> g_backend{
#ifdef MTNAT_HAVE_OPENMP
    Backend::OpenMP
#else
    Backend::Serial
#endif
};
}  // namespace

Backend backend() { return g_backend.load(std::memory_order_relaxed); }

void set_backend(Backend b) {
#ifndef MTNAT_HAVE_OPENMP
    b = Backend::Serial;
#endif
    g_backend.store(b, std::memory_order_relaxed);
}

bool openmp_compiled() {
#ifdef MTNAT_HAVE_OPENMP
    return true;
#else
    return false;
#endif
}

int thread_count() {
#ifdef MTNAT_HAVE_OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

// ---------------------------------------------------------------------------
// Shared inner loops. All floating-point arithmetic lives here so the serial
// and OpenMP backends execute the exact same instructions per output element;
// the backends differ only in how they distribute rows/lanes/chunks across
// threads. noinline keeps one compiled copy per helper: if the compiler
// re-inlined them per call site it could contract or schedule the arithmetic
// differently and break the bit-identity contract.
// ---------------------------------------------------------------------------

#if defined(__GNUC__) || defined(__clang__)
#define MTNAT_NOINLINE __attribute__((noinline))
#else
#define MTNAT_NOINLINE
#endif

namespace detail {

MTNAT_NOINLINE void matmul_nn_row(const double* arow, const double* pb, double* crow, std::size_t k,
                          std::size_t n, bool acc) {
    if (!acc) std::fill(crow, crow + n, 0.0);
    for (std::size_t kk = 0; kk < k; ++kk) {
        const double av = arow[kk];
        const double* brow = pb + kk * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
}

MTNAT_NOINLINE void matmul_nt_row(const double* arow, const double* pb, double* crow, std::size_t n,
                          std::size_t k, bool acc) {
    for (std::size_t kk = 0; kk < k; ++kk) {
        const double* brow = pb + kk * n;
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += arow[j] * brow[j];
        crow[kk] = acc ? crow[kk] + s : s;
    }
}

// One output row kk of a^T * d for a single batch element.
MTNAT_NOINLINE void matmul_tn_row(const double* pa, const double* pd, double* crow, std::size_t m,
                          std::size_t k, std::size_t n, std::size_t kk, bool acc) {
    if (!acc) std::fill(crow, crow + n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double av = pa[i * k + kk];
        const double* drow = pd + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * drow[j];
    }
}

MTNAT_NOINLINE void add_range(const double* x, const double* y, double* out, std::size_t lo,
                      std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) out[i] = x[i] + y[i];
}

MTNAT_NOINLINE void mul_range(const double* x, const double* y, double* out, std::size_t lo,
                      std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) out[i] = x[i] * y[i];
}

MTNAT_NOINLINE void scale_range(const double* x, double alpha, double* out, std::size_t lo,
                        std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) out[i] = alpha * x[i];
}

MTNAT_NOINLINE void axpy_range(double alpha, const double* x, double* y, std::size_t lo,
                       std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) y[i] += alpha * x[i];
}

MTNAT_NOINLINE void relu_range(const double* x, double* y, std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

MTNAT_NOINLINE void relu_bwd_range(const double* x, const double* dy, double* dx, std::size_t lo,
                           std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i)
        if (x[i] > 0.0) dx[i] += dy[i];
}

MTNAT_NOINLINE void add_bias_row(const double* xr, const double* bias, double* yr, std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) yr[j] = xr[j] + bias[j];
}

MTNAT_NOINLINE void softmax_lane(const double* x, double* y, std::size_t n, std::size_t stride) {
    double mx = x[0];
    for (std::size_t t = 1; t < n; ++t) mx = std::max(mx, x[t * stride]);
    double s = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        const double e = std::exp(x[t * stride] - mx);
        y[t * stride] = e;
        s += e;
    }
    const double inv = 1.0 / s;
    for (std::size_t t = 0; t < n; ++t) y[t * stride] *= inv;
}

MTNAT_NOINLINE void softmax_bwd_lane(const double* y, const double* dy, double* dx, std::size_t n,
                             std::size_t stride) {
    double dot = 0.0;
    for (std::size_t t = 0; t < n; ++t) dot += dy[t * stride] * y[t * stride];
    for (std::size_t t = 0; t < n; ++t)
        dx[t * stride] += (dy[t * stride] - dot) * y[t * stride];
}

MTNAT_NOINLINE void layernorm_row(const double* x, const double* gamma, const double* beta, double eps,
                          double* y, double* mean, double* rstd, std::size_t n) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += x[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const double dv = x[j] - mu;
        var += dv * dv;
    }
    var /= static_cast<double>(n);
    const double rs = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) y[j] = (x[j] - mu) * rs * gamma[j] + beta[j];
    *mean = mu;
    *rstd = rs;
}

MTNAT_NOINLINE void layernorm_bwd_row(const double* x, const double* gamma, double mean, double rstd,
                              const double* dy, double* dx, std::size_t n) {
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const double xhat = (x[j] - mean) * rstd;
        const double dxhat = dy[j] * gamma[j];
        s1 += dxhat;
        s2 += dxhat * xhat;
    }
    const double invn = 1.0 / static_cast<double>(n);
    s1 *= invn;
    s2 *= invn;
    for (std::size_t j = 0; j < n; ++j) {
        const double xhat = (x[j] - mean) * rstd;
        const double dxhat = dy[j] * gamma[j];
        dx[j] += rstd * (dxhat - s1 - xhat * s2);
    }
}

// dgamma/dbeta column; one j per call so threads never share an output.
MTNAT_NOINLINE void layernorm_param_col(const double* x, const double* mean, const double* rstd,
                                const double* dy, double* dgamma, double* dbeta,
                                std::size_t rows, std::size_t n, std::size_t j) {
    double dg = 0.0, db = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const double xhat = (x[r * n + j] - mean[r]) * rstd[r];
        dg += dy[r * n + j] * xhat;
        db += dy[r * n + j];
    }
    dgamma[j] += dg;
    dbeta[j] += db;
}

MTNAT_NOINLINE void cross_entropy_row(const double* z, std::int32_t target, double eps,
                              double* row_loss, double* row_lse, std::size_t n) {
    double mx = z[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, z[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(z[j] - mx);
    const double lse = mx + std::log(s);
    double zsum = 0.0;
    for (std::size_t j = 0; j < n; ++j) zsum += z[j];
    *row_loss = lse - (1.0 - eps) * z[target] - eps / static_cast<double>(n) * zsum;
    *row_lse = lse;
}

MTNAT_NOINLINE void cross_entropy_bwd_row(const double* z, std::int32_t target, double eps, double lse,
                                  double w, double* dz, std::size_t n) {
    const double unif = eps / static_cast<double>(n);
    for (std::size_t j = 0; j < n; ++j) {
        const double p = std::exp(z[j] - lse);
        double q = unif;
        if (static_cast<std::int32_t>(j) == target) q += 1.0 - eps;
        dz[j] += w * (p - q);
    }
}

MTNAT_NOINLINE void masked_fill_range(const double* x, const std::uint8_t* mask, double value,
                              double* y, std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) y[i] = mask[i] ? value : x[i];
}

MTNAT_NOINLINE void masked_fill_bwd_range(const std::uint8_t* mask, const double* dy, double* dx,
                                  std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i)
        if (!mask[i]) dx[i] += dy[i];
}

MTNAT_NOINLINE void colsum_col(const double* x, double* out, std::size_t rows, std::size_t n,
                       std::size_t j) {
    double s = 0.0;
    for (std::size_t r = 0; r < rows; ++r) s += x[r * n + j];
    out[j] += s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Serial reference backend.
// ---------------------------------------------------------------------------

namespace serial {

void matmul_nn(const double* a, const double* b, double* c, std::size_t batch, std::size_t m,
               std::size_t k, std::size_t n, bool shared_b, bool acc) {
    for (std::size_t bi = 0; bi < batch; ++bi)
        for (std::size_t i = 0; i < m; ++i)
            detail::matmul_nn_row(a + (bi * m + i) * k, b + (shared_b ? 0 : bi * k * n),
                                  c + (bi * m + i) * n, k, n, acc);
}

void matmul_nt(const double* a, const double* b, double* c, std::size_t batch, std::size_t m,
               std::size_t n, std::size_t k, bool shared_b, bool acc) {
    for (std::size_t bi = 0; bi < batch; ++bi)
        for (std::size_t i = 0; i < m; ++i)
            detail::matmul_nt_row(a + (bi * m + i) * n, b + (shared_b ? 0 : bi * k * n),
                                  c + (bi * m + i) * k, n, k, acc);
}

void matmul_tn(const double* a, const double* d, double* c, std::size_t batch, std::size_t m,
               std::size_t k, std::size_t n, bool acc) {
    for (std::size_t bi = 0; bi < batch; ++bi)
        for (std::size_t kk = 0; kk < k; ++kk)
            detail::matmul_tn_row(a + bi * m * k, d + bi * m * n, c + (bi * k + kk) * n, m, k, n,
                                  kk, acc);
}

void matmul_tn_reduce(const double* a, const double* d, double* c, std::size_t batch,
                      std::size_t m, std::size_t k, std::size_t n, bool acc) {
    for (std::size_t kk = 0; kk < k; ++kk) {
        double* crow = c + kk * n;
        if (!acc) std::fill(crow, crow + n, 0.0);
        for (std::size_t bi = 0; bi < batch; ++bi)
            detail::matmul_tn_row(a + bi * m * k, d + bi * m * n, crow, m, k, n, kk, true);
    }
}

void add(const double* x, const double* y, double* out, std::size_t n) {
    detail::add_range(x, y, out, 0, n);
}

void add_bias(const double* x, const double* bias, double* out, std::size_t rows,
              std::size_t n) {
    for (std::size_t r = 0; r < rows; ++r)
        detail::add_bias_row(x + r * n, bias, out + r * n, n);
}

void mul(const double* x, const double* y, double* out, std::size_t n) {
    detail::mul_range(x, y, out, 0, n);
}

void scale(const double* x, double alpha, double* out, std::size_t n) {
    detail::scale_range(x, alpha, out, 0, n);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    detail::axpy_range(alpha, x, y, 0, n);
}

void relu(const double* x, double* y, std::size_t n) { detail::relu_range(x, y, 0, n); }

void relu_bwd(const double* x, const double* dy, double* dx, std::size_t n) {
    detail::relu_bwd_range(x, dy, dx, 0, n);
}

void softmax_lanes(const double* x, double* y, std::size_t outer, std::size_t n,
                   std::size_t inner) {
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i)
            detail::softmax_lane(x + o * n * inner + i, y + o * n * inner + i, n, inner);
}

void softmax_bwd_lanes(const double* y, const double* dy, double* dx, std::size_t outer,
                       std::size_t n, std::size_t inner) {
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * n * inner + i;
            detail::softmax_bwd_lane(y + base, dy + base, dx + base, n, inner);
        }
}

void layernorm(const double* x, const double* gamma, const double* beta, double eps, double* y,
               double* mean, double* rstd, std::size_t rows, std::size_t n) {
    for (std::size_t r = 0; r < rows; ++r)
        detail::layernorm_row(x + r * n, gamma, beta, eps, y + r * n, mean + r, rstd + r, n);
}

void layernorm_bwd(const double* x, const double* gamma, const double* mean, const double* rstd,
                   const double* dy, double* dx, double* dgamma, double* dbeta,
                   std::size_t rows, std::size_t n) {
    for (std::size_t r = 0; r < rows; ++r)
        detail::layernorm_bwd_row(x + r * n, gamma, mean[r], rstd[r], dy + r * n, dx + r * n, n);
    for (std::size_t j = 0; j < n; ++j)
        detail::layernorm_param_col(x, mean, rstd, dy, dgamma, dbeta, rows, n, j);
}

void embedding(const double* table, const std::int32_t* ids, double* out, std::size_t count,
               std::size_t dim) {
    for (std::size_t i = 0; i < count; ++i) {
        const double* src = table + static_cast<std::size_t>(ids[i]) * dim;
        std::copy(src, src + dim, out + i * dim);
    }
}

void embedding_bwd(const double* dy, const std::int32_t* ids, double* dtable, std::size_t count,
                   std::size_t dim) {
    for (std::size_t i = 0; i < count; ++i) {
        double* dst = dtable + static_cast<std::size_t>(ids[i]) * dim;
        const double* src = dy + i * dim;
        for (std::size_t j = 0; j < dim; ++j) dst[j] += src[j];
    }
}

void cross_entropy(const double* logits, const std::int32_t* targets, std::int32_t ignore_index,
                   double eps, double* row_loss, double* row_lse, std::size_t rows,
                   std::size_t n) {
    for (std::size_t r = 0; r < rows; ++r) {
        if (targets[r] == ignore_index) {
            row_loss[r] = 0.0;
            row_lse[r] = 0.0;
        } else {
            detail::cross_entropy_row(logits + r * n, targets[r], eps, row_loss + r,
                                      row_lse + r, n);
        }
    }
}

void cross_entropy_bwd(const double* logits, const std::int32_t* targets,
                       std::int32_t ignore_index, double eps, const double* row_lse,
                       const double* row_weight, double* dlogits, std::size_t rows,
                       std::size_t n) {
    for (std::size_t r = 0; r < rows; ++r) {
        if (targets[r] == ignore_index || row_weight[r] == 0.0) continue;
        detail::cross_entropy_bwd_row(logits + r * n, targets[r], eps, row_lse[r],
                                      row_weight[r], dlogits + r * n, n);
    }
}

void masked_fill(const double* x, const std::uint8_t* mask, double value, double* y,
                 std::size_t n) {
    detail::masked_fill_range(x, mask, value, y, 0, n);
}

void masked_fill_bwd(const std::uint8_t* mask, const double* dy, double* dx, std::size_t n) {
    detail::masked_fill_bwd_range(mask, dy, dx, 0, n);
}

double sum(const double* x, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s;
}

void colsum(const double* x, double* out, std::size_t rows, std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) detail::colsum_col(x, out, rows, n, j);
}

bool all_finite(const double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(x[i])) return false;
    return true;
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP backend. Each pragma distributes whole output rows/lanes/chunks,
// calling the same detail:: inner loops as the serial reference.
// ---------------------------------------------------------------------------

namespace omp {

#ifdef MTNAT_HAVE_OPENMP

namespace {
// Elementwise ranges are cut into fixed-size chunks; chunk boundaries do not
// affect results because elements are independent.
constexpr std::size_t kChunk = 16384;
constexpr std::size_t kParallelCutoff = 16384;
}  // namespace

void matmul_nn(const double* a, const double* b, double* c, std::size_t batch, std::size_t m,
               std::size_t k, std::size_t n, bool shared_b, bool acc) {
#pragma omp parallel for collapse(2) schedule(static) if (batch * m > 1)
    for (std::size_t bi = 0; bi < batch; ++bi)
        for (std::size_t i = 0; i < m; ++i)
            detail::matmul_nn_row(a + (bi * m + i) * k, b + (shared_b ? 0 : bi * k * n),
                                  c + (bi * m + i) * n, k, n, acc);
}

void matmul_nt(const double* a, const double* b, double* c, std::size_t batch, std::size_t m,
               std::size_t n, std::size_t k, bool shared_b, bool acc) {
#pragma omp parallel for collapse(2) schedule(static) if (batch * m > 1)
    for (std::size_t bi = 0; bi < batch; ++bi)
        for (std::size_t i = 0; i < m; ++i)
            detail::matmul_nt_row(a + (bi * m + i) * n, b + (shared_b ? 0 : bi * k * n),
                                  c + (bi * m + i) * k, n, k, acc);
}

void matmul_tn(const double* a, const double* d, double* c, std::size_t batch, std::size_t m,
               std::size_t k, std::size_t n, bool acc) {
#pragma omp parallel for collapse(2) schedule(static) if (batch * k > 1)
    for (std::size_t bi = 0; bi < batch; ++bi)
        for (std::size_t kk = 0; kk < k; ++kk)
            detail::matmul_tn_row(a + bi * m * k, d + bi * m * n, c + (bi * k + kk) * n, m, k, n,
                                  kk, acc);
}

void matmul_tn_reduce(const double* a, const double* d, double* c, std::size_t batch,
                      std::size_t m, std::size_t k, std::size_t n, bool acc) {
    // Threads own whole output rows; the batch/m accumulation order within a
    // row matches the serial reference exactly.
#pragma omp parallel for schedule(static) if (k > 1)
    for (std::size_t kk = 0; kk < k; ++kk) {
        double* crow = c + kk * n;
        if (!acc) std::fill(crow, crow + n, 0.0);
        for (std::size_t bi = 0; bi < batch; ++bi)
            detail::matmul_tn_row(a + bi * m * k, d + bi * m * n, crow, m, k, n, kk, true);
    }
}

namespace {
template <typename RangeFn>
void parallel_ranges(std::size_t n, RangeFn&& fn) {
    if (n < kParallelCutoff) {
        fn(std::size_t{0}, n);
        return;
    }
    const std::size_t chunks = (n + kChunk - 1) / kChunk;
#pragma omp parallel for schedule(static)
    for (std::size_t ci = 0; ci < chunks; ++ci)
        fn(ci * kChunk, std::min(n, (ci + 1) * kChunk));
}
}  // namespace

void add(const double* x, const double* y, double* out, std::size_t n) {
    parallel_ranges(n, [&](std::size_t lo, std::size_t hi) {
        detail::add_range(x, y, out, lo, hi);
    });
}

void add_bias(const double* x, const double* bias, double* out, std::size_t rows,
              std::size_t n) {
#pragma omp parallel for schedule(static) if (rows > 1)
    for (std::size_t r = 0; r < rows; ++r)
        detail::add_bias_row(x + r * n, bias, out + r * n, n);
}

void mul(const double* x, const double* y, double* out, std::size_t n) {
    parallel_ranges(n, [&](std::size_t lo, std::size_t hi) {
        detail::mul_range(x, y, out, lo, hi);
    });
}

void scale(const double* x, double alpha, double* out, std::size_t n) {
    parallel_ranges(n, [&](std::size_t lo, std::size_t hi) {
        detail::scale_range(x, alpha, out, lo, hi);
    });
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    parallel_ranges(n, [&](std::size_t lo, std::size_t hi) {
        detail::axpy_range(alpha, x, y, lo, hi);
    });
}

void relu(const double* x, double* y, std::size_t n) {
    parallel_ranges(n, [&](std::size_t lo, std::size_t hi) {
        detail::relu_range(x, y, lo, hi);
    });
}

void relu_bwd(const double* x, const double* dy, double* dx, std::size_t n) {
    parallel_ranges(n, [&](std::size_t lo, std::size_t hi) {
        detail::relu_bwd_range(x, dy, dx, lo, hi);
    });
}

void softmax_lanes(const double* x, double* y, std::size_t outer, std::size_t n,
                   std::size_t inner) {
#pragma omp parallel for collapse(2) schedule(static) if (outer * inner > 1)
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i)
            detail::softmax_lane(x + o * n * inner + i, y + o * n * inner + i, n, inner);
}

void softmax_bwd_lanes(const double* y, const double* dy, double* dx, std::size_t outer,
                       std::size_t n, std::size_t inner) {
#pragma omp parallel for collapse(2) schedule(static) if (outer * inner > 1)
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * n * inner + i;
            detail::softmax_bwd_lane(y + base, dy + base, dx + base, n, inner);
        }
}

void layernorm(const double* x, const double* gamma, const double* beta, double eps, double* y,
               double* mean, double* rstd, std::size_t rows, std::size_t n) {
#pragma omp parallel for schedule(static) if (rows > 1)
    for (std::size_t r = 0; r < rows; ++r)
        detail::layernorm_row(x + r * n, gamma, beta, eps, y + r * n, mean + r, rstd + r, n);
}

void layernorm_bwd(const double* x, const double* gamma, const double* mean, const double* rstd,
                   const double* dy, double* dx, double* dgamma, double* dbeta,
                   std::size_t rows, std::size_t n) {
#pragma omp parallel for schedule(static) if (rows > 1)
    for (std::size_t r = 0; r < rows; ++r)
        detail::layernorm_bwd_row(x + r * n, gamma, mean[r], rstd[r], dy + r * n, dx + r * n, n);
#pragma omp parallel for schedule(static) if (n > 1)
    for (std::size_t j = 0; j < n; ++j)
        detail::layernorm_param_col(x, mean, rstd, dy, dgamma, dbeta, rows, n, j);
}

void embedding(const double* table, const std::int32_t* ids, double* out, std::size_t count,
               std::size_t dim) {
#pragma omp parallel for schedule(static) if (count > 1)
    for (std::size_t i = 0; i < count; ++i) {
        const double* src = table + static_cast<std::size_t>(ids[i]) * dim;
        std::copy(src, src + dim, out + i * dim);
    }
}

void embedding_bwd(const double* dy, const std::int32_t* ids, double* dtable, std::size_t count,
                   std::size_t dim) {
    // Scatter-add over possibly duplicate ids: parallelizing would either race
    // or reorder accumulation, so this stays serial in both backends.
    serial::embedding_bwd(dy, ids, dtable, count, dim);
}

void cross_entropy(const double* logits, const std::int32_t* targets, std::int32_t ignore_index,
                   double eps, double* row_loss, double* row_lse, std::size_t rows,
                   std::size_t n) {
#pragma omp parallel for schedule(static) if (rows > 1)
    for (std::size_t r = 0; r < rows; ++r) {
        if (targets[r] == ignore_index) {
            row_loss[r] = 0.0;
            row_lse[r] = 0.0;
        } else {
            detail::cross_entropy_row(logits + r * n, targets[r], eps, row_loss + r,
                                      row_lse + r, n);
        }
    }
}

void cross_entropy_bwd(const double* logits, const std::int32_t* targets,
                       std::int32_t ignore_index, double eps, const double* row_lse,
                       const double* row_weight, double* dlogits, std::size_t rows,
                       std::size_t n) {
#pragma omp parallel for schedule(static) if (rows > 1)
    for (std::size_t r = 0; r < rows; ++r) {
        if (targets[r] == ignore_index || row_weight[r] == 0.0) continue;
        detail::cross_entropy_bwd_row(logits + r * n, targets[r], eps, row_lse[r],
                                      row_weight[r], dlogits + r * n, n);
    }
}

void masked_fill(const double* x, const std::uint8_t* mask, double value, double* y,
                 std::size_t n) {
    parallel_ranges(n, [&](std::size_t lo, std::size_t hi) {
        detail::masked_fill_range(x, mask, value, y, lo, hi);
    });
}

void masked_fill_bwd(const std::uint8_t* mask, const double* dy, double* dx, std::size_t n) {
    parallel_ranges(n, [&](std::size_t lo, std::size_t hi) {
        detail::masked_fill_bwd_range(mask, dy, dx, lo, hi);
    });
}

double sum(const double* x, std::size_t n) {
    // Left-to-right accumulation order is part of the determinism contract.
    return serial::sum(x, n);
}

void colsum(const double* x, double* out, std::size_t rows, std::size_t n) {
#pragma omp parallel for schedule(static) if (n > 1)
    for (std::size_t j = 0; j < n; ++j) detail::colsum_col(x, out, rows, n, j);
}

bool all_finite(const double* x, std::size_t n) {
    if (n < kParallelCutoff) return serial::all_finite(x, n);
    bool ok = true;
#pragma omp parallel for schedule(static) reduction(&& : ok)
    for (std::size_t i = 0; i < n; ++i) ok = ok && std::isfinite(x[i]);
    return ok;
}

#else  // !MTNAT_HAVE_OPENMP: forward everything to the reference.

void matmul_nn(const double* a, const double* b, double* c, std::size_t batch, std::size_t m,
               std::size_t k, std::size_t n, bool shared_b, bool acc) {
    serial::matmul_nn(a, b, c, batch, m, k, n, shared_b, acc);
}
void matmul_nt(const double* a, const double* b, double* c, std::size_t batch, std::size_t m,
               std::size_t n, std::size_t k, bool shared_b, bool acc) {
    serial::matmul_nt(a, b, c, batch, m, n, k, shared_b, acc);
}
void matmul_tn(const double* a, const double* d, double* c, std::size_t batch, std::size_t m,
               std::size_t k, std::size_t n, bool acc) {
    serial::matmul_tn(a, d, c, batch, m, k, n, acc);
}
void matmul_tn_reduce(const double* a, const double* d, double* c, std::size_t batch,
                      std::size_t m, std::size_t k, std::size_t n, bool acc) {
    serial::matmul_tn_reduce(a, d, c, batch, m, k, n, acc);
}
void add(const double* x, const double* y, double* out, std::size_t n) {
    serial::add(x, y, out, n);
}
void add_bias(const double* x, const double* bias, double* out, std::size_t rows,
              std::size_t n) {
    serial::add_bias(x, bias, out, rows, n);
}
void mul(const double* x, const double* y, double* out, std::size_t n) {
    serial::mul(x, y, out, n);
}
void scale(const double* x, double alpha, double* out, std::size_t n) {
    serial::scale(x, alpha, out, n);
}
void axpy(double alpha, const double* x, double* y, std::size_t n) {
    serial::axpy(alpha, x, y, n);
}
void relu(const double* x, double* y, std::size_t n) { serial::relu(x, y, n); }
void relu_bwd(const double* x, const double* dy, double* dx, std::size_t n) {
    serial::relu_bwd(x, dy, dx, n);
}
void softmax_lanes(const double* x, double* y, std::size_t outer, std::size_t n,
                   std::size_t inner) {
    serial::softmax_lanes(x, y, outer, n, inner);
}
void softmax_bwd_lanes(const double* y, const double* dy, double* dx, std::size_t outer,
                       std::size_t n, std::size_t inner) {
    serial::softmax_bwd_lanes(y, dy, dx, outer, n, inner);
}
void layernorm(const double* x, const double* gamma, const double* beta, double eps, double* y,
               double* mean, double* rstd, std::size_t rows, std::size_t n) {
    serial::layernorm(x, gamma, beta, eps, y, mean, rstd, rows, n);
}
void layernorm_bwd(const double* x, const double* gamma, const double* mean, const double* rstd,
                   const double* dy, double* dx, double* dgamma, double* dbeta,
                   std::size_t rows, std::size_t n) {
    serial::layernorm_bwd(x, gamma, mean, rstd, dy, dx, dgamma, dbeta, rows, n);
}
void embedding(const double* table, const std::int32_t* ids, double* out, std::size_t count,
               std::size_t dim) {
    serial::embedding(table, ids, out, count, dim);
}
void embedding_bwd(const double* dy, const std::int32_t* ids, double* dtable, std::size_t count,
                   std::size_t dim) {
    serial::embedding_bwd(dy, ids, dtable, count, dim);
}
void cross_entropy(const double* logits, const std::int32_t* targets, std::int32_t ignore_index,
                   double eps, double* row_loss, double* row_lse, std::size_t rows,
                   std::size_t n) {
    serial::cross_entropy(logits, targets, ignore_index, eps, row_loss, row_lse, rows, n);
}
void cross_entropy_bwd(const double* logits, const std::int32_t* targets,
                       std::int32_t ignore_index, double eps, const double* row_lse,
                       const double* row_weight, double* dlogits, std::size_t rows,
                       std::size_t n) {
    serial::cross_entropy_bwd(logits, targets, ignore_index, eps, row_lse, row_weight, dlogits,
                              rows, n);
}
void masked_fill(const double* x, const std::uint8_t* mask, double value, double* y,
                 std::size_t n) {
    serial::masked_fill(x, mask, value, y, n);
}
void masked_fill_bwd(const std::uint8_t* mask, const double* dy, double* dx, std::size_t n) {
    serial::masked_fill_bwd(mask, dy, dx, n);
}
double sum(const double* x, std::size_t n) { return serial::sum(x, n); }
void colsum(const double* x, double* out, std::size_t rows, std::size_t n) {
    serial::colsum(x, out, rows, n);
}
bool all_finite(const double* x, std::size_t n) { return serial::all_finite(x, n); }

#endif  // MTNAT_HAVE_OPENMP

}  // namespace omp

// ---------------------------------------------------------------------------
// Dispatchers.
// ---------------------------------------------------------------------------

#define MTNAT_DISPATCH(fn, ...)                                        \
    do {                                                               \
        if (backend() == Backend::OpenMP) return omp::fn(__VA_ARGS__); \
        return serial::fn(__VA_ARGS__);                                \
    } while (0)

void matmul_nn(const double* a, const double* b, double* c, std::size_t batch, std::size_t m,
               std::size_t k, std::size_t n, bool shared_b, bool acc) {
    MTNAT_DISPATCH(matmul_nn, a, b, c, batch, m, k, n, shared_b, acc);
}
void matmul_nt(const double* a, const double* b, double* c, std::size_t batch, std::size_t m,
               std::size_t n, std::size_t k, bool shared_b, bool acc) {
    MTNAT_DISPATCH(matmul_nt, a, b, c, batch, m, n, k, shared_b, acc);
}
void matmul_tn(const double* a, const double* d, double* c, std::size_t batch, std::size_t m,
               std::size_t k, std::size_t n, bool acc) {
    MTNAT_DISPATCH(matmul_tn, a, d, c, batch, m, k, n, acc);
}
void matmul_tn_reduce(const double* a, const double* d, double* c, std::size_t batch,
                      std::size_t m, std::size_t k, std::size_t n, bool acc) {
    MTNAT_DISPATCH(matmul_tn_reduce, a, d, c, batch, m, k, n, acc);
}
void add(const double* x, const double* y, double* out, std::size_t n) {
    MTNAT_DISPATCH(add, x, y, out, n);
}
void add_bias(const double* x, const double* bias, double* out, std::size_t rows,
              std::size_t n) {
    MTNAT_DISPATCH(add_bias, x, bias, out, rows, n);
}
void mul(const double* x, const double* y, double* out, std::size_t n) {
    MTNAT_DISPATCH(mul, x, y, out, n);
}
void scale(const double* x, double alpha, double* out, std::size_t n) {
    MTNAT_DISPATCH(scale, x, alpha, out, n);
}
void axpy(double alpha, const double* x, double* y, std::size_t n) {
    MTNAT_DISPATCH(axpy, alpha, x, y, n);
}
void relu(const double* x, double* y, std::size_t n) { MTNAT_DISPATCH(relu, x, y, n); }
void relu_bwd(const double* x, const double* dy, double* dx, std::size_t n) {
    MTNAT_DISPATCH(relu_bwd, x, dy, dx, n);
}
void softmax_lanes(const double* x, double* y, std::size_t outer, std::size_t n,
                   std::size_t inner) {
    MTNAT_DISPATCH(softmax_lanes, x, y, outer, n, inner);
}
void softmax_bwd_lanes(const double* y, const double* dy, double* dx, std::size_t outer,
                       std::size_t n, std::size_t inner) {
    MTNAT_DISPATCH(softmax_bwd_lanes, y, dy, dx, outer, n, inner);
}
void layernorm(const double* x, const double* gamma, const double* beta, double eps, double* y,
               double* mean, double* rstd, std::size_t rows, std::size_t n) {
    MTNAT_DISPATCH(layernorm, x, gamma, beta, eps, y, mean, rstd, rows, n);
}
void layernorm_bwd(const double* x, const double* gamma, const double* mean, const double* rstd,
                   const double* dy, double* dx, double* dgamma, double* dbeta,
                   std::size_t rows, std::size_t n) {
    MTNAT_DISPATCH(layernorm_bwd, x, gamma, mean, rstd, dy, dx, dgamma, dbeta, rows, n);
}
void embedding(const double* table, const std::int32_t* ids, double* out, std::size_t count,
               std::size_t dim) {
    MTNAT_DISPATCH(embedding, table, ids, out, count, dim);
}
void embedding_bwd(const double* dy, const std::int32_t* ids, double* dtable, std::size_t count,
                   std::size_t dim) {
    MTNAT_DISPATCH(embedding_bwd, dy, ids, dtable, count, dim);
}
void cross_entropy(const double* logits, const std::int32_t* targets, std::int32_t ignore_index,
                   double eps, double* row_loss, double* row_lse, std::size_t rows,
                   std::size_t n) {
    MTNAT_DISPATCH(cross_entropy, logits, targets, ignore_index, eps, row_loss, row_lse, rows, n);
}
void cross_entropy_bwd(const double* logits, const std::int32_t* targets,
                       std::int32_t ignore_index, double eps, const double* row_lse,
                       const double* row_weight, double* dlogits, std::size_t rows,
                       std::size_t n) {
    MTNAT_DISPATCH(cross_entropy_bwd, logits, targets, ignore_index, eps, row_lse, row_weight,
                   dlogits, rows, n);
}
void masked_fill(const double* x, const std::uint8_t* mask, double value, double* y,
                 std::size_t n) {
    MTNAT_DISPATCH(masked_fill, x, mask, value, y, n);
}
void masked_fill_bwd(const std::uint8_t* mask, const double* dy, double* dx, std::size_t n) {
    MTNAT_DISPATCH(masked_fill_bwd, mask, dy, dx, n);
}
double sum(const double* x, std::size_t n) {
    if (backend() == Backend::OpenMP) return omp::sum(x, n);
    return serial::sum(x, n);
}
void colsum(const double* x, double* out, std::size_t rows, std::size_t n) {
    MTNAT_DISPATCH(colsum, x, out, rows, n);
}
bool all_finite(const double* x, std::size_t n) {
    if (backend() == Backend::OpenMP) return omp::all_finite(x, n);
    return serial::all_finite(x, n);
}

#undef MTNAT_DISPATCH

}  // namespace mtnat::kernels
