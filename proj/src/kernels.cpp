#include "famadapt/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

namespace famadapt::kernels {

namespace {

inline void matmul_nn_row(const double* a, const double* b, double* c,
                          std::size_t i, std::size_t k, std::size_t n) {
  double* ci = c + i * n;
  std::fill(ci, ci + n, 0.0);
  const double* ai = a + i * k;
  for (std::size_t t = 0; t < k; ++t) {
    double av = ai[t];
    const double* bt = b + t * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] += av * bt[j];
  }
}

inline void matmul_nt_row(const double* x, const double* y, double* c,
                          std::size_t i, std::size_t p, std::size_t q) {
  const double* xi = x + i * p;
  double* ci = c + i * q;
  for (std::size_t j = 0; j < q; ++j) {
    const double* yj = y + j * p;
    double acc = 0.0;
    for (std::size_t t = 0; t < p; ++t) acc += xi[t] * yj[t];
    ci[j] += acc;
  }
}

inline void matmul_tn_row(const double* x, const double* y, double* c,
                          std::size_t i, std::size_t m, std::size_t p, std::size_t q) {
  // row i of c[p x q]: c[i,j] += sum_r x[r,i] * y[r,j]
  double* ci = c + i * q;
  for (std::size_t r = 0; r < m; ++r) {
    double xv = x[r * p + i];
    const double* yr = y + r * q;
    for (std::size_t j = 0; j < q; ++j) ci[j] += xv * yr[j];
  }
}

inline void softmax_row(const double* x, double* y, std::size_t i, std::size_t cols) {
  const double* xi = x + i * cols;
  double* yi = y + i * cols;
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, xi[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    yi[j] = std::exp(xi[j] - mx);
    sum += yi[j];
  }
  double inv = 1.0 / sum;
  for (std::size_t j = 0; j < cols; ++j) yi[j] *= inv;
}

inline void layer_norm_row(const double* x, const double* scale, const double* offset,
                           double* y, double* mean, double* inv_std,
                           std::size_t i, std::size_t cols, double eps) {
  const double* xi = x + i * cols;
  double* yi = y + i * cols;
  double mu = 0.0;
  for (std::size_t j = 0; j < cols; ++j) mu += xi[j];
  mu /= static_cast<double>(cols);
  double var = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    double d = xi[j] - mu;
    var += d * d;
  }
  var /= static_cast<double>(cols);
  double istd = 1.0 / std::sqrt(var + eps);
  mean[i] = mu;
  inv_std[i] = istd;
  for (std::size_t j = 0; j < cols; ++j) yi[j] = (xi[j] - mu) * istd * scale[j] + offset[j];
}

std::atomic<bool> g_parallel{
#ifdef _OPENMP
    true
#else
    false
#endif
};

// Below this many output elements the serial path is used unconditionally.
constexpr std::size_t kParallelCutover = 4096;

}  // namespace

namespace ref {

void matmul_nn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) matmul_nn_row(a, b, c, i, k, n);
}

void matmul_nt_acc(const double* x, const double* y, double* c,
                   std::size_t m, std::size_t p, std::size_t q) {
  for (std::size_t i = 0; i < m; ++i) matmul_nt_row(x, y, c, i, p, q);
}

void matmul_tn_acc(const double* x, const double* y, double* c,
                   std::size_t m, std::size_t p, std::size_t q) {
  for (std::size_t i = 0; i < p; ++i) matmul_tn_row(x, y, c, i, m, p, q);
}

void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) softmax_row(x, y, i, cols);
}

void layer_norm_rows(const double* x, const double* scale, const double* offset,
                     double* y, double* mean, double* inv_std,
                     std::size_t rows, std::size_t cols, double eps) {
  for (std::size_t i = 0; i < rows; ++i)
    layer_norm_row(x, scale, offset, y, mean, inv_std, i, cols, eps);
}

}  // namespace ref

namespace par {

void matmul_nn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < m; ++i) matmul_nn_row(a, b, c, i, k, n);
}

void matmul_nt_acc(const double* x, const double* y, double* c,
                   std::size_t m, std::size_t p, std::size_t q) {
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < m; ++i) matmul_nt_row(x, y, c, i, p, q);
}

void matmul_tn_acc(const double* x, const double* y, double* c,
                   std::size_t m, std::size_t p, std::size_t q) {
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < p; ++i) matmul_tn_row(x, y, c, i, m, p, q);
}

void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols) {
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < rows; ++i) softmax_row(x, y, i, cols);
}

void layer_norm_rows(const double* x, const double* scale, const double* offset,
                     double* y, double* mean, double* inv_std,
                     std::size_t rows, std::size_t cols, double eps) {
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < rows; ++i)
    layer_norm_row(x, scale, offset, y, mean, inv_std, i, cols, eps);
}

}  // namespace par

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }
void set_parallel(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

void matmul_nn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
  if (parallel_enabled() && m * n >= kParallelCutover)
    par::matmul_nn(a, b, c, m, k, n);
  else
    ref::matmul_nn(a, b, c, m, k, n);
}

void matmul_nt_acc(const double* x, const double* y, double* c,
                   std::size_t m, std::size_t p, std::size_t q) {
  if (parallel_enabled() && m * q >= kParallelCutover)
    par::matmul_nt_acc(x, y, c, m, p, q);
  else
    ref::matmul_nt_acc(x, y, c, m, p, q);
}

void matmul_tn_acc(const double* x, const double* y, double* c,
                   std::size_t m, std::size_t p, std::size_t q) {
  if (parallel_enabled() && p * q >= kParallelCutover)
    par::matmul_tn_acc(x, y, c, m, p, q);
  else
    ref::matmul_tn_acc(x, y, c, m, p, q);
}

void softmax_rows(const double* x, double* y, std::size_t rows, std::size_t cols) {
  if (parallel_enabled() && rows * cols >= kParallelCutover)
    par::softmax_rows(x, y, rows, cols);
  else
    ref::softmax_rows(x, y, rows, cols);
}

void layer_norm_rows(const double* x, const double* scale, const double* offset,
                     double* y, double* mean, double* inv_std,
                     std::size_t rows, std::size_t cols, double eps) {
  if (parallel_enabled() && rows * cols >= kParallelCutover)
    par::layer_norm_rows(x, scale, offset, y, mean, inv_std, rows, cols, eps);
  else
    ref::layer_norm_rows(x, scale, offset, y, mean, inv_std, rows, cols, eps);
}

}  // namespace famadapt::kernels
