#include "gpldlab/grad_check.hpp"

#include <cmath>

namespace gpldlab::ad {

double grad_check(const ScalarFn& f, const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw DomainError("grad_check: eps must be positive");

  Tape tape;
  Tensor xl = tape.leaf(x);
  Tensor y = f(xl);
  if (y.numel() != 1) throw ShapeError("grad_check: f must return a scalar");
  auto res = tape.backward(y, {&xl, 1}, /*create_graph=*/false);
  const std::vector<double>& ga = res.grads[0].values();

  const int n = x.numel();
  std::vector<double> base = x.values();
  double worst = 0.0;
  for (int i = 0; i < n; ++i) {
    std::vector<double> vp = base, vm = base;
    vp[static_cast<std::size_t>(i)] += eps;
    vm[static_cast<std::size_t>(i)] -= eps;
    double fp = f(Tensor(x.shape(), std::move(vp))).scalar_value();
    double fm = f(Tensor(x.shape(), std::move(vm))).scalar_value();
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("grad_check: f non-finite at probe point");
    double gf = (fp - fm) / (2.0 * eps);
    double denom = std::max({std::fabs(ga[static_cast<std::size_t>(i)]), std::fabs(gf), 1.0});
    worst = std::max(worst, std::fabs(ga[static_cast<std::size_t>(i)] - gf) / denom);
  }
  return worst;
}

}  // namespace gpldlab::ad
