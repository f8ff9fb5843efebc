#pragma once

#include <functional>

#include "gpldlab/tape.hpp"

namespace gpldlab::ad {

// Scalar-valued function of one tensor. The argument carries the tape; the
// same callable is evaluated tape-free (on constants) for finite differences.
using ScalarFn = std::function<Tensor(const Tensor&)>;

// Compares the reverse-mode gradient of f at x against central finite
// differences with step eps. Returns the max over coordinates of
// |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1). Throws NumericError if f is
// non-finite at a probe point.
double grad_check(const ScalarFn& f, const Tensor& x, double eps);

}  // namespace gpldlab::ad
