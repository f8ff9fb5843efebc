#include <cstring>
#include <vector>

#include "doctest.h"
#include "gpldlab/kernels.hpp"
#include "gpldlab/rng.hpp"

using namespace gpldlab;

namespace {

std::vector<double> random_vec(Rng& rng, int n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (double& x : v) x = rng.normal();
  return v;
}

bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("serial and parallel kernels are bit-identical") {
  Rng rng(42);
  // Odd sizes on purpose: partitions must not change results.
  const int shapes[][3] = {{1, 1, 1}, {3, 7, 5}, {16, 129, 64}, {33, 17, 51}, {128, 96, 80}};
  for (auto& s : shapes) {
    int m = s[0], k = s[1], n = s[2];
    auto a = random_vec(rng, m * k);
    auto b = random_vec(rng, k * n);
    auto bt = random_vec(rng, n * k);
    auto at = random_vec(rng, k * m);
    std::vector<double> c1(static_cast<std::size_t>(m) * n), c2(static_cast<std::size_t>(m) * n);

    kern::serial::matmul_nn(a.data(), b.data(), c1.data(), m, k, n);
    kern::parallel::matmul_nn(a.data(), b.data(), c2.data(), m, k, n);
    CHECK(bits_equal(c1, c2));

    kern::serial::matmul_nt(a.data(), bt.data(), c1.data(), m, k, n);
    kern::parallel::matmul_nt(a.data(), bt.data(), c2.data(), m, k, n);
    CHECK(bits_equal(c1, c2));

    kern::serial::matmul_tn(at.data(), b.data(), c1.data(), m, k, n);
    kern::parallel::matmul_tn(at.data(), b.data(), c2.data(), m, k, n);
    CHECK(bits_equal(c1, c2));
  }
}

TEST_CASE("elementwise kernels: serial vs parallel bit-identical") {
  Rng rng(7);
  for (int n : {1, 17, 1000, 40001}) {
    auto x = random_vec(rng, n);
    auto b = random_vec(rng, n);
    std::vector<double> y1(static_cast<std::size_t>(n)), y2(static_cast<std::size_t>(n));

    kern::serial::tanh(x.data(), y1.data(), n);
    kern::parallel::tanh(x.data(), y2.data(), n);
    CHECK(bits_equal(y1, y2));

    kern::serial::exp(x.data(), y1.data(), n);
    kern::parallel::exp(x.data(), y2.data(), n);
    CHECK(bits_equal(y1, y2));

    kern::serial::mul(x.data(), b.data(), y1.data(), n);
    kern::parallel::mul(x.data(), b.data(), y2.data(), n);
    CHECK(bits_equal(y1, y2));

    kern::serial::add(x.data(), b.data(), y1.data(), n);
    kern::parallel::add(x.data(), b.data(), y2.data(), n);
    CHECK(bits_equal(y1, y2));
  }
}

TEST_CASE("row_softmax rows sum to one and match serial") {
  Rng rng(3);
  const int rows = 37, cols = 11;
  auto x = random_vec(rng, rows * cols);
  for (double& v : x) v *= 10.0;  // spread logits
  std::vector<double> y1(x.size()), y2(x.size());
  kern::serial::row_softmax(x.data(), y1.data(), rows, cols);
  kern::parallel::row_softmax(x.data(), y2.data(), rows, cols);
  CHECK(bits_equal(y1, y2));
  for (int r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int c = 0; c < cols; ++c) s += y1[static_cast<std::size_t>(r) * cols + c];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("dispatcher result matches serial reference regardless of settings") {
  Rng rng(9);
  const int m = 40, k = 200, n = 30;  // above the matmul grain
  auto a = random_vec(rng, m * k);
  auto b = random_vec(rng, k * n);
  std::vector<double> c_ref(static_cast<std::size_t>(m) * n), c_disp(static_cast<std::size_t>(m) * n);
  kern::serial::matmul_nn(a.data(), b.data(), c_ref.data(), m, k, n);

  kern::set_parallel_enabled(true);
  kern::matmul_nn(a.data(), b.data(), c_disp.data(), m, k, n);
  CHECK(bits_equal(c_ref, c_disp));

  kern::set_parallel_enabled(false);
  kern::matmul_nn(a.data(), b.data(), c_disp.data(), m, k, n);
  CHECK(bits_equal(c_ref, c_disp));
  kern::set_parallel_enabled(true);
}
