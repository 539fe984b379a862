#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <vector>

#include "famadapt/kernels.hpp"
#include "famadapt/rng.hpp"

using namespace famadapt;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-2.0, 2.0);
  return v;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("parallel matmul variants match the serial reference bit for bit") {
  Rng rng(7001);
  // Mix of tiny, skinny, and larger-than-cutover shapes.
  const std::size_t shapes[][3] = {
      {1, 1, 1}, {2, 3, 4}, {5, 1, 7}, {17, 9, 13}, {64, 64, 64}, {3, 200, 5}, {128, 32, 96}};
  for (auto [m, k, n] : shapes) {
    CAPTURE(m);
    CAPTURE(k);
    CAPTURE(n);
    auto a = random_vec(rng, m * k);
    auto b = random_vec(rng, k * n);

    std::vector<double> c_ref(m * n), c_par(m * n);
    kernels::ref::matmul_nn(a.data(), b.data(), c_ref.data(), m, k, n);
    kernels::par::matmul_nn(a.data(), b.data(), c_par.data(), m, k, n);
    CHECK(bit_equal(c_ref, c_par));

    // The accumulating variants start from the same nonzero contents.
    auto seed_nt = random_vec(rng, m * n);
    auto x = random_vec(rng, m * k);
    auto y = random_vec(rng, n * k);
    auto d_ref = seed_nt, d_par = seed_nt;
    kernels::ref::matmul_nt_acc(x.data(), y.data(), d_ref.data(), m, k, n);
    kernels::par::matmul_nt_acc(x.data(), y.data(), d_par.data(), m, k, n);
    CHECK(bit_equal(d_ref, d_par));

    auto seed_tn = random_vec(rng, k * n);
    auto u = random_vec(rng, m * k);
    auto w = random_vec(rng, m * n);
    auto e_ref = seed_tn, e_par = seed_tn;
    kernels::ref::matmul_tn_acc(u.data(), w.data(), e_ref.data(), m, k, n);
    kernels::par::matmul_tn_acc(u.data(), w.data(), e_par.data(), m, k, n);
    CHECK(bit_equal(e_ref, e_par));
  }
}

TEST_CASE("parallel softmax matches the serial reference bit for bit") {
  Rng rng(7002);
  const std::size_t shapes[][2] = {{1, 1}, {1, 9}, {8, 3}, {33, 17}, {200, 64}};
  for (auto [rows, cols] : shapes) {
    CAPTURE(rows);
    CAPTURE(cols);
    auto x = random_vec(rng, rows * cols);
    std::vector<double> y_ref(x.size()), y_par(x.size());
    kernels::ref::softmax_rows(x.data(), y_ref.data(), rows, cols);
    kernels::par::softmax_rows(x.data(), y_par.data(), rows, cols);
    CHECK(bit_equal(y_ref, y_par));
  }
}

TEST_CASE("parallel layer norm matches the serial reference bit for bit") {
  Rng rng(7003);
  const std::size_t shapes[][2] = {{1, 2}, {4, 5}, {31, 16}, {150, 48}};
  for (auto [rows, cols] : shapes) {
    CAPTURE(rows);
    CAPTURE(cols);
    auto x = random_vec(rng, rows * cols);
    auto scale = random_vec(rng, cols);
    auto offset = random_vec(rng, cols);
    std::vector<double> y_ref(x.size()), y_par(x.size());
    std::vector<double> mu_ref(rows), mu_par(rows), is_ref(rows), is_par(rows);
    kernels::ref::layer_norm_rows(x.data(), scale.data(), offset.data(), y_ref.data(),
                                  mu_ref.data(), is_ref.data(), rows, cols, 1e-5);
    kernels::par::layer_norm_rows(x.data(), scale.data(), offset.data(), y_par.data(),
                                  mu_par.data(), is_par.data(), rows, cols, 1e-5);
    CHECK(bit_equal(y_ref, y_par));
    CHECK(bit_equal(mu_ref, mu_par));
    CHECK(bit_equal(is_ref, is_par));
  }
}

TEST_CASE("dispatch entry points agree with the reference on both sides of the cutover") {
  Rng rng(7004);
  for (bool par_on : {true, false}) {
    kernels::set_parallel(par_on);
    CHECK(kernels::parallel_enabled() == par_on);
    // 8x8x8 stays serial, 32x48x40 crosses the 4096-element cutover.
    const std::size_t dispatch_shapes[][3] = {{8, 8, 8}, {32, 48, 40}};
    for (auto [m, k, n] : dispatch_shapes) {
      auto a = random_vec(rng, m * k);
      auto b = random_vec(rng, k * n);
      std::vector<double> c_ref(m * n), c_dis(m * n);
      kernels::ref::matmul_nn(a.data(), b.data(), c_ref.data(), m, k, n);
      kernels::matmul_nn(a.data(), b.data(), c_dis.data(), m, k, n);
      CHECK(bit_equal(c_ref, c_dis));
    }
  }
  kernels::set_parallel(true);
}

TEST_CASE("matmul reference produces the hand-computed product") {
  const double a[] = {1, 2, 3, 4};
  const double b[] = {5, 6, 7, 8};
  double c[4];
  kernels::ref::matmul_nn(a, b, c, 2, 2, 2);
  CHECK(c[0] == 19.0);
  CHECK(c[1] == 22.0);
  CHECK(c[2] == 43.0);
  CHECK(c[3] == 50.0);
}

TEST_CASE("softmax rows sum to one and order is preserved") {
  Rng rng(7005);
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t rows = 1 + static_cast<std::size_t>(rng.randint(6));
    std::size_t cols = 1 + static_cast<std::size_t>(rng.randint(12));
    auto x = random_vec(rng, rows * cols);
    std::vector<double> y(x.size());
    kernels::ref::softmax_rows(x.data(), y.data(), rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < cols; ++j) {
        s += y[r * cols + j];
        CHECK(y[r * cols + j] > 0.0);
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
      for (std::size_t j = 0; j + 1 < cols; ++j) {
        if (x[r * cols + j] < x[r * cols + j + 1]) CHECK(y[r * cols + j] < y[r * cols + j + 1]);
      }
    }
  }
}

TEST_CASE("layer norm output has zero mean and unit variance under identity affine") {
  Rng rng(7006);
  const std::size_t rows = 12, cols = 32;
  auto x = random_vec(rng, rows * cols);
  std::vector<double> scale(cols, 1.0), offset(cols, 0.0);
  std::vector<double> y(x.size()), mu(rows), istd(rows);
  kernels::ref::layer_norm_rows(x.data(), scale.data(), offset.data(), y.data(), mu.data(),
                                istd.data(), rows, cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mean += y[r * cols + j];
    mean /= cols;
    for (std::size_t j = 0; j < cols; ++j) {
      double d = y[r * cols + j] - mean;
      var += d * d;
    }
    var /= cols;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-10));
  }
}
