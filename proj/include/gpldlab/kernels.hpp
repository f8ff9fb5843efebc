#pragma once

#include <cstddef>

namespace gpldlab::kern {

// Dense double-precision kernels behind the tape. Every kernel exists twice:
// a plain serial reference in kern::serial, and an OpenMP work-shared variant
// in kern::parallel. The dispatching functions in this namespace pick the
// parallel path when it is enabled, more than one thread is available, and
// the problem is large enough to amortize the fork.
//
// Bit-exactness contract: the parallel variants partition work by output
// element only (each output element is computed by exactly one thread with
// the same instruction sequence as the serial code), so serial and parallel
// results are bit-identical for any thread count. Full reductions (sum, dot)
// are kept serial for the same reason.

namespace serial {

// C[m x n] = A[m x k] * B[k x n]
void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n);
// C[m x n] = A[m x k] * B[n x k]^T
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);
// C[m x n] = A[k x m]^T * B[k x n]
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);

void add(const double* a, const double* b, double* y, int n);
void mul(const double* a, const double* b, double* y, int n);
void scale(double alpha, const double* x, double* y, int n);
void axpy(double alpha, const double* x, double* y, int n);  // y += alpha*x
void tanh(const double* x, double* y, int n);
void exp(const double* x, double* y, int n);
void log(const double* x, double* y, int n);
void square(const double* x, double* y, int n);

// Numerically stable softmax over each row of an r x c matrix.
void row_softmax(const double* x, double* y, int rows, int cols);

double sum(const double* x, int n);
double dot(const double* a, const double* b, int n);

}  // namespace serial

namespace parallel {

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);

void add(const double* a, const double* b, double* y, int n);
void mul(const double* a, const double* b, double* y, int n);
void scale(double alpha, const double* x, double* y, int n);
void axpy(double alpha, const double* x, double* y, int n);
void tanh(const double* x, double* y, int n);
void exp(const double* x, double* y, int n);
void log(const double* x, double* y, int n);
void square(const double* x, double* y, int n);
void row_softmax(const double* x, double* y, int rows, int cols);

}  // namespace parallel

// Runtime switches. Parallel execution defaults to on, but the dispatcher
// falls back to serial when OpenMP reports a single thread or the flop count
// is below the grain thresholds.
void set_parallel_enabled(bool on);
bool parallel_enabled();
int max_threads();

// Grain sizes (element counts) below which dispatch stays serial.
inline constexpr long kMatmulGrain = 64 * 1024;      // m*k*n
inline constexpr long kElementwiseGrain = 32 * 1024; // n

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);
void add(const double* a, const double* b, double* y, int n);
void mul(const double* a, const double* b, double* y, int n);
void scale(double alpha, const double* x, double* y, int n);
void axpy(double alpha, const double* x, double* y, int n);
void tanh(const double* x, double* y, int n);
void exp(const double* x, double* y, int n);
void log(const double* x, double* y, int n);
void square(const double* x, double* y, int n);
void row_softmax(const double* x, double* y, int rows, int cols);
double sum(const double* x, int n);
double dot(const double* a, const double* b, int n);

}  // namespace gpldlab::kern
