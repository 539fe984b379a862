#pragma once

#include <cstddef>

namespace famadapt::kernels {

// Dense row-major kernels in two variants: a serial reference (ref::) and an
// OpenMP one (par::). Both compute every output element with the same fixed
// accumulation order and parallelize only across independent elements, so
// par:: results are bit-identical to ref:: for any thread count.
//
// Naming: nn = a.b, nt = a.b^T, tn = a^T.b; _acc variants accumulate into c.

namespace ref {

// c[m x n] = a[m x k] . b[k x n]
void matmul_nn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n);

// c[m x q] += x[m x p] . y[q x p]^T
void matmul_nt_acc(const double* x, const double* y, double* c,
                   std::size_t m, std::size_t p, std::size_t q);

// c[p x q] += x[m x p]^T . y[m x q]
void matmul_tn_acc(const double* x, const double* y, double* c,
                   std::size_t m, std::size_t p, std::size_t q);

// Per-row softmax with max subtraction.
void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols);

// Per-row normalization: y = (x - mean) / sqrt(var + eps) * scale + offset.
// mean/inv_std (one per row) are written for the backward pass.
void layer_norm_rows(const double* x, const double* scale, const double* offset,
                     double* y, double* mean, double* inv_std,
                     std::size_t rows, std::size_t cols, double eps);

}  // namespace ref

namespace par {

void matmul_nn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n);
void matmul_nt_acc(const double* x, const double* y, double* c,
                   std::size_t m, std::size_t p, std::size_t q);
void matmul_tn_acc(const double* x, const double* y, double* c,
                   std::size_t m, std::size_t p, std::size_t q);
void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols);
void layer_norm_rows(const double* x, const double* scale, const double* offset,
                     double* y, double* mean, double* inv_std,
                     std::size_t rows, std::size_t cols, double eps);

}  // namespace par

bool parallel_enabled();
void set_parallel(bool on);

// Dispatching entry points used by the ops layer. Small problems stay on the
// serial path; the cutover is size-based only, so results never depend on it.
void matmul_nn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n);
void matmul_nt_acc(const double* x, const double* y, double* c,
                   std::size_t m, std::size_t p, std::size_t q);
void matmul_tn_acc(const double* x, const double* y, double* c,
                   std::size_t m, std::size_t p, std::size_t q);
void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols);
void layer_norm_rows(const double* x, const double* scale, const double* offset,
                     double* y, double* mean, double* inv_std,
                     std::size_t rows, std::size_t cols, double eps);

}  // namespace famadapt::kernels
