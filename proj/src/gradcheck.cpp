#include "master/gradcheck.hpp"

#include <cmath>
#include <vector>

namespace master {

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps) {
  x.set_requires_grad(true);
  std::vector<double> analytic;
  {
    GradTape tape;
    TapeScope scope(tape);
    Tensor y = f(x);
    if (y.size() != 1) {
      throw ContractError("grad_check: f must be scalar-valued, got " + shape_str(y.shape()));
    }
    x.zero_grad();
    tape.backward(y);
    analytic.assign(x.grad_data(), x.grad_data() + x.size());
  }
  NoGradScope no_grad;
  double worst = 0.0;
  for (std::int64_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double up = f(x).item();
    x[i] = saved - eps;
    const double down = f(x).item();
    x[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double a = analytic[static_cast<std::size_t>(i)];
    const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace master
