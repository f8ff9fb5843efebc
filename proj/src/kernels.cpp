#include "gpldlab/kernels.hpp"

#include <atomic>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace gpldlab::kern {

namespace serial {

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) ci[j] = 0.0;
    const double* ai = a + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  // b is n x k row-major; c[i][j] = <a_i, b_j>
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<std::size_t>(i) * k;
    double* ci = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + static_cast<std::size_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] = s;
    }
  }
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
  // a is k x m row-major; c[i][j] = sum_p a[p][i] * b[p][j]
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) ci[j] = 0.0;
    for (int p = 0; p < k; ++p) {
      const double api = a[static_cast<std::size_t>(p) * m + i];
      const double* bp = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

void add(const double* a, const double* b, double* y, int n) {
  for (int i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

void mul(const double* a, const double* b, double* y, int n) {
  for (int i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

void scale(double alpha, const double* x, double* y, int n) {
  for (int i = 0; i < n; ++i) y[i] = alpha * x[i];
}

void axpy(double alpha, const double* x, double* y, int n) {
  for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void tanh(const double* x, double* y, int n) {
  for (int i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}

void exp(const double* x, double* y, int n) {
  for (int i = 0; i < n; ++i) y[i] = std::exp(x[i]);
}

void log(const double* x, double* y, int n) {
  for (int i = 0; i < n; ++i) y[i] = std::log(x[i]);
}

void square(const double* x, double* y, int n) {
  for (int i = 0; i < n; ++i) y[i] = x[i] * x[i];
}

void row_softmax(const double* x, double* y, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    const double* xr = x + static_cast<std::size_t>(r) * cols;
    double* yr = y + static_cast<std::size_t>(r) * cols;
    double mx = xr[0];
    for (int j = 1; j < cols; ++j) mx = xr[j] > mx ? xr[j] : mx;
    double z = 0.0;
    for (int j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      z += yr[j];
    }
    const double inv = 1.0 / z;
    for (int j = 0; j < cols; ++j) yr[j] *= inv;
  }
}

double sum(const double* x, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += x[i];
  return s;
}

double dot(const double* a, const double* b, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace serial

namespace parallel {

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) ci[j] = 0.0;
    const double* ai = a + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<std::size_t>(i) * k;
    double* ci = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + static_cast<std::size_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] = s;
    }
  }
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) ci[j] = 0.0;
    for (int p = 0; p < k; ++p) {
      const double api = a[static_cast<std::size_t>(p) * m + i];
      const double* bp = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

#define GPLDLAB_EW_PARALLEL(expr)            \
  _Pragma("omp parallel for schedule(static)") \
  for (int i = 0; i < n; ++i) {              \
    expr;                                    \
  }

void add(const double* a, const double* b, double* y, int n) {
  GPLDLAB_EW_PARALLEL(y[i] = a[i] + b[i])
}
void mul(const double* a, const double* b, double* y, int n) {
  GPLDLAB_EW_PARALLEL(y[i] = a[i] * b[i])
}
void scale(double alpha, const double* x, double* y, int n) {
  GPLDLAB_EW_PARALLEL(y[i] = alpha * x[i])
}
void axpy(double alpha, const double* x, double* y, int n) {
  GPLDLAB_EW_PARALLEL(y[i] += alpha * x[i])
}
void tanh(const double* x, double* y, int n) {
  GPLDLAB_EW_PARALLEL(y[i] = std::tanh(x[i]))
}
void exp(const double* x, double* y, int n) {
  GPLDLAB_EW_PARALLEL(y[i] = std::exp(x[i]))
}
void log(const double* x, double* y, int n) {
  GPLDLAB_EW_PARALLEL(y[i] = std::log(x[i]))
}
void square(const double* x, double* y, int n) {
  GPLDLAB_EW_PARALLEL(y[i] = x[i] * x[i])
}

#undef GPLDLAB_EW_PARALLEL

void row_softmax(const double* x, double* y, int rows, int cols) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const double* xr = x + static_cast<std::size_t>(r) * cols;
    double* yr = y + static_cast<std::size_t>(r) * cols;
    double mx = xr[0];
    for (int j = 1; j < cols; ++j) mx = xr[j] > mx ? xr[j] : mx;
    double z = 0.0;
    for (int j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      z += yr[j];
    }
    const double inv = 1.0 / z;
    for (int j = 0; j < cols; ++j) yr[j] *= inv;
  }
}

}  // namespace parallel

namespace {
std::atomic<bool> g_parallel_enabled{true};
}

void set_parallel_enabled(bool on) { g_parallel_enabled.store(on); }
bool parallel_enabled() { return g_parallel_enabled.load(); }

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {
inline bool use_parallel(long work, long grain) {
  return g_parallel_enabled.load(std::memory_order_relaxed) &&
         max_threads() > 1 && work >= grain;
}
}  // namespace

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n) {
  if (use_parallel(static_cast<long>(m) * k * n, kMatmulGrain))
    parallel::matmul_nn(a, b, c, m, k, n);
  else
    serial::matmul_nn(a, b, c, m, k, n);
}
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  if (use_parallel(static_cast<long>(m) * k * n, kMatmulGrain))
    parallel::matmul_nt(a, b, c, m, k, n);
  else
    serial::matmul_nt(a, b, c, m, k, n);
}
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
  if (use_parallel(static_cast<long>(m) * k * n, kMatmulGrain))
    parallel::matmul_tn(a, b, c, m, k, n);
  else
    serial::matmul_tn(a, b, c, m, k, n);
}

#define GPLDLAB_EW_DISPATCH(fn, ...)                    \
  if (use_parallel(n, kElementwiseGrain))               \
    parallel::fn(__VA_ARGS__);                          \
  else                                                  \
    serial::fn(__VA_ARGS__);

void add(const double* a, const double* b, double* y, int n) {
  GPLDLAB_EW_DISPATCH(add, a, b, y, n)
}
void mul(const double* a, const double* b, double* y, int n) {
  GPLDLAB_EW_DISPATCH(mul, a, b, y, n)
}
void scale(double alpha, const double* x, double* y, int n) {
  GPLDLAB_EW_DISPATCH(scale, alpha, x, y, n)
}
void axpy(double alpha, const double* x, double* y, int n) {
  GPLDLAB_EW_DISPATCH(axpy, alpha, x, y, n)
}
void tanh(const double* x, double* y, int n) {
  GPLDLAB_EW_DISPATCH(tanh, x, y, n)
}
void exp(const double* x, double* y, int n) {
  GPLDLAB_EW_DISPATCH(exp, x, y, n)
}
void log(const double* x, double* y, int n) {
  GPLDLAB_EW_DISPATCH(log, x, y, n)
}
void square(const double* x, double* y, int n) {
  GPLDLAB_EW_DISPATCH(square, x, y, n)
}

#undef GPLDLAB_EW_DISPATCH

void row_softmax(const double* x, double* y, int rows, int cols) {
  if (use_parallel(static_cast<long>(rows) * cols, kElementwiseGrain))
    parallel::row_softmax(x, y, rows, cols);
  else
    serial::row_softmax(x, y, rows, cols);
}

double sum(const double* x, int n) { return serial::sum(x, n); }
double dot(const double* a, const double* b, int n) { return serial::dot(a, b, n); }

}  // namespace gpldlab::kern
