#pragma once

#include <cstddef>
#include <cstdint>

// Numeric inner loops, each in two variants: a plain serial reference and an
// OpenMP one. Both produce bit-identical results for any thread count: the
// parallel variants only split independent output elements across threads and
// never reorder an accumulation. kernels_test.cpp checks the equivalence,
// tools/bench_kernels compares throughput.
namespace mtnat::kernels {

enum class Backend { Serial, OpenMP };

Backend backend();
void set_backend(Backend b);
bool openmp_compiled();
int thread_count();

namespace serial {

// c[b,m,n] (+)= sum_k a[b,m,k] * b[b,k,n]; shared_b: b is one [k,n] matrix.
void matmul_nn(const double* a, const double* b, double* c, std::size_t batch,
               std::size_t m, std::size_t k, std::size_t n, bool shared_b, bool acc);
// c[b,m,k] (+)= a[b,m,n] * b[b,k,n]^T
void matmul_nt(const double* a, const double* b, double* c, std::size_t batch,
               std::size_t m, std::size_t n, std::size_t k, bool shared_b, bool acc);
// c[b,k,n] (+)= a[b,m,k]^T * d[b,m,n]
void matmul_tn(const double* a, const double* d, double* c, std::size_t batch,
               std::size_t m, std::size_t k, std::size_t n, bool acc);
// c[k,n] (+)= sum_b a[b,m,k]^T * d[b,m,n]
void matmul_tn_reduce(const double* a, const double* d, double* c, std::size_t batch,
                      std::size_t m, std::size_t k, std::size_t n, bool acc);

void add(const double* x, const double* y, double* out, std::size_t n);
// out[r,:] = x[r,:] + bias for each of `rows` rows of width n
void add_bias(const double* x, const double* bias, double* out, std::size_t rows, std::size_t n);
void mul(const double* x, const double* y, double* out, std::size_t n);
void scale(const double* x, double alpha, double* out, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void relu(const double* x, double* y, std::size_t n);
// dx += dy where x > 0
void relu_bwd(const double* x, const double* dy, double* dx, std::size_t n);

// Softmax along a middle axis: x is viewed as [outer, n, inner].
void softmax_lanes(const double* x, double* y, std::size_t outer, std::size_t n,
                   std::size_t inner);
// dx += (dy - sum(dy*y)) * y per lane
void softmax_bwd_lanes(const double* y, const double* dy, double* dx, std::size_t outer,
                       std::size_t n, std::size_t inner);

void layernorm(const double* x, const double* gamma, const double* beta, double eps,
               double* y, double* mean, double* rstd, std::size_t rows, std::size_t n);
void layernorm_bwd(const double* x, const double* gamma, const double* mean,
                   const double* rstd, const double* dy, double* dx, double* dgamma,
                   double* dbeta, std::size_t rows, std::size_t n);

void embedding(const double* table, const std::int32_t* ids, double* out, std::size_t count,
               std::size_t dim);
// dtable[ids[i],:] += dy[i,:]; scatter stays serial so accumulation order is fixed
void embedding_bwd(const double* dy, const std::int32_t* ids, double* dtable,
                   std::size_t count, std::size_t dim);

// Per-row smoothed NLL. row_loss[r] and row_lse[r] are outputs; rows with
// target == ignore_index get loss 0. eps is the label-smoothing mass.
void cross_entropy(const double* logits, const std::int32_t* targets, std::int32_t ignore_index,
                   double eps, double* row_loss, double* row_lse, std::size_t rows,
                   std::size_t n);
// dlogits[r,:] += w[r] * (softmax(logits[r,:]) - q_r)
void cross_entropy_bwd(const double* logits, const std::int32_t* targets,
                       std::int32_t ignore_index, double eps, const double* row_lse,
                       const double* row_weight, double* dlogits, std::size_t rows,
                       std::size_t n);

void masked_fill(const double* x, const std::uint8_t* mask, double value, double* y,
                 std::size_t n);
void masked_fill_bwd(const std::uint8_t* mask, const double* dy, double* dx, std::size_t n);

double sum(const double* x, std::size_t n);
// out[j] += sum_r x[r,j]
void colsum(const double* x, double* out, std::size_t rows, std::size_t n);

bool all_finite(const double* x, std::size_t n);

}  // namespace serial

namespace omp {

void matmul_nn(const double* a, const double* b, double* c, std::size_t batch,
               std::size_t m, std::size_t k, std::size_t n, bool shared_b, bool acc);
void matmul_nt(const double* a, const double* b, double* c, std::size_t batch,
               std::size_t m, std::size_t n, std::size_t k, bool shared_b, bool acc);
void matmul_tn(const double* a, const double* d, double* c, std::size_t batch,
               std::size_t m, std::size_t k, std::size_t n, bool acc);
void matmul_tn_reduce(const double* a, const double* d, double* c, std::size_t batch,
                      std::size_t m, std::size_t k, std::size_t n, bool acc);

void add(const double* x, const double* y, double* out, std::size_t n);
void add_bias(const double* x, const double* bias, double* out, std::size_t rows, std::size_t n);
void mul(const double* x, const double* y, double* out, std::size_t n);
void scale(const double* x, double alpha, double* out, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void relu(const double* x, double* y, std::size_t n);
void relu_bwd(const double* x, const double* dy, double* dx, std::size_t n);

void softmax_lanes(const double* x, double* y, std::size_t outer, std::size_t n,
                   std::size_t inner);
void softmax_bwd_lanes(const double* y, const double* dy, double* dx, std::size_t outer,
                       std::size_t n, std::size_t inner);

void layernorm(const double* x, const double* gamma, const double* beta, double eps,
               double* y, double* mean, double* rstd, std::size_t rows, std::size_t n);
void layernorm_bwd(const double* x, const double* gamma, const double* mean,
                   const double* rstd, const double* dy, double* dx, double* dgamma,
                   double* dbeta, std::size_t rows, std::size_t n);

void embedding(const double* table, const std::int32_t* ids, double* out, std::size_t count,
               std::size_t dim);
void embedding_bwd(const double* dy, const std::int32_t* ids, double* dtable,
                   std::size_t count, std::size_t dim);

void cross_entropy(const double* logits, const std::int32_t* targets, std::int32_t ignore_index,
                   double eps, double* row_loss, double* row_lse, std::size_t rows,
                   std::size_t n);
void cross_entropy_bwd(const double* logits, const std::int32_t* targets,
                       std::int32_t ignore_index, double eps, const double* row_lse,
                       const double* row_weight, double* dlogits, std::size_t rows,
                       std::size_t n);

void masked_fill(const double* x, const std::uint8_t* mask, double value, double* y,
                 std::size_t n);
void masked_fill_bwd(const std::uint8_t* mask, const double* dy, double* dx, std::size_t n);

double sum(const double* x, std::size_t n);
void colsum(const double* x, double* out, std::size_t rows, std::size_t n);

bool all_finite(const double* x, std::size_t n);

}  // namespace omp

// Dispatchers honoring the active backend.
void matmul_nn(const double* a, const double* b, double* c, std::size_t batch, std::size_t m,
               std::size_t k, std::size_t n, bool shared_b, bool acc);
void matmul_nt(const double* a, const double* b, double* c, std::size_t batch, std::size_t m,
               std::size_t n, std::size_t k, bool shared_b, bool acc);
void matmul_tn(const double* a, const double* d, double* c, std::size_t batch, std::size_t m,
               std::size_t k, std::size_t n, bool acc);
void matmul_tn_reduce(const double* a, const double* d, double* c, std::size_t batch,
                      std::size_t m, std::size_t k, std::size_t n, bool acc);
void add(const double* x, const double* y, double* out, std::size_t n);
void add_bias(const double* x, const double* bias, double* out, std::size_t rows, std::size_t n);
void mul(const double* x, const double* y, double* out, std::size_t n);
void scale(const double* x, double alpha, double* out, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void relu(const double* x, double* y, std::size_t n);
void relu_bwd(const double* x, const double* dy, double* dx, std::size_t n);
void softmax_lanes(const double* x, double* y, std::size_t outer, std::size_t n,
                   std::size_t inner);
void softmax_bwd_lanes(const double* y, const double* dy, double* dx, std::size_t outer,
                       std::size_t n, std::size_t inner);
void layernorm(const double* x, const double* gamma, const double* beta, double eps, double* y,
               double* mean, double* rstd, std::size_t rows, std::size_t n);
void layernorm_bwd(const double* x, const double* gamma, const double* mean, const double* rstd,
                   const double* dy, double* dx, double* dgamma, double* dbeta,
                   std::size_t rows, std::size_t n);
void embedding(const double* table, const std::int32_t* ids, double* out, std::size_t count,
               std::size_t dim);
void embedding_bwd(const double* dy, const std::int32_t* ids, double* dtable, std::size_t count,
                   std::size_t dim);
void cross_entropy(const double* logits, const std::int32_t* targets, std::int32_t ignore_index,
                   double eps, double* row_loss, double* row_lse, std::size_t rows,
                   std::size_t n);
void cross_entropy_bwd(const double* logits, const std::int32_t* targets,
                       std::int32_t ignore_index, double eps, const double* row_lse,
                       const double* row_weight, double* dlogits, std::size_t rows,
                       std::size_t n);
void masked_fill(const double* x, const std::uint8_t* mask, double value, double* y,
                 std::size_t n);
void masked_fill_bwd(const std::uint8_t* mask, const double* dy, double* dx, std::size_t n);
double sum(const double* x, std::size_t n);
void colsum(const double* x, double* out, std::size_t rows, std::size_t n);
bool all_finite(const double* x, std::size_t n);

}  // namespace mtnat::kernels
