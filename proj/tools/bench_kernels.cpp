// Benchmark of the serial reference kernels against the OpenMP variants.
// Prints one row per kernel and size with median wall time and speedup.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "gpldlab/kernels.hpp"
#include "gpldlab/rng.hpp"

using namespace gpldlab;
using Clock = std::chrono::steady_clock;

namespace {

double median_time(const std::vector<double>& samples) {
  std::vector<double> s = samples;
  std::sort(s.begin(), s.end());
  return s[s.size() / 2];
}

template <typename F>
double time_kernel(F&& fn, int reps) {
  std::vector<double> samples;
  samples.reserve(static_cast<std::size_t>(reps));
  for (int i = 0; i < reps; ++i) {
    auto t0 = Clock::now();
    fn();
    auto t1 = Clock::now();
    samples.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  return median_time(samples);
}

}  // namespace

int main(int argc, char** argv) {
  int reps = 9;
  if (argc > 1) reps = std::atoi(argv[1]);
  if (reps < 3) reps = 3;

  std::printf("threads available: %d\n", kern::max_threads());
  std::printf("%-12s %-16s %12s %12s %8s\n", "kernel", "size", "serial[s]", "openmp[s]", "speedup");

  Rng rng(2024);
  const int mm_sizes[][3] = {{16, 129, 64}, {64, 256, 64}, {256, 256, 256}, {512, 512, 512}};
  for (auto& s : mm_sizes) {
    int m = s[0], k = s[1], n = s[2];
    std::vector<double> a(static_cast<std::size_t>(m) * k), b(static_cast<std::size_t>(k) * n),
        c(static_cast<std::size_t>(m) * n);
    for (double& x : a) x = rng.normal();
    for (double& x : b) x = rng.normal();
    double ts = time_kernel([&] { kern::serial::matmul_nn(a.data(), b.data(), c.data(), m, k, n); }, reps);
    double tp = time_kernel([&] { kern::parallel::matmul_nn(a.data(), b.data(), c.data(), m, k, n); }, reps);
    char size[64];
    std::snprintf(size, sizeof size, "%dx%dx%d", m, k, n);
    std::printf("%-12s %-16s %12.3e %12.3e %8.2f\n", "matmul_nn", size, ts, tp, ts / tp);
  }

  for (int n : {100000, 1000000, 4000000}) {
    std::vector<double> x(static_cast<std::size_t>(n)), y(static_cast<std::size_t>(n));
    for (double& v : x) v = rng.normal();
    double ts = time_kernel([&] { kern::serial::tanh(x.data(), y.data(), n); }, reps);
    double tp = time_kernel([&] { kern::parallel::tanh(x.data(), y.data(), n); }, reps);
    std::printf("%-12s %-16d %12.3e %12.3e %8.2f\n", "tanh", n, ts, tp, ts / tp);
  }

  for (int rows : {1000, 10000}) {
    const int cols = 64;
    std::vector<double> x(static_cast<std::size_t>(rows) * cols), y(x.size());
    for (double& v : x) v = rng.normal();
    double ts = time_kernel([&] { kern::serial::row_softmax(x.data(), y.data(), rows, cols); }, reps);
    double tp = time_kernel([&] { kern::parallel::row_softmax(x.data(), y.data(), rows, cols); }, reps);
    char size[64];
    std::snprintf(size, sizeof size, "%dx%d", rows, cols);
    std::printf("%-12s %-16s %12.3e %12.3e %8.2f\n", "row_softmax", size, ts, tp, ts / tp);
  }
  return 0;
}
