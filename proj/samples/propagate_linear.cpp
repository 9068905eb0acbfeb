// Propagates a 4-pixel Gaussian image through f(x) = 3 x0 with a fixed
// intrinsic log-variance, and compares against the closed form
// var_prop = 9 * 0.04 = 0.36, mu_delta = exp(delta).

#include <cmath>
#include <cstdio>

#include "uncprop/uncprop.hpp"

int main() {
  using namespace uncprop;
  Image mean(2, 2), log_var(2, 2);
  for (double& v : log_var.data) v = std::log(0.04);
  mean.data = {0.5, 0.1, -0.2, 0.3};
  const DiagGaussianImage x(mean, log_var);

  const double delta = std::log(0.25);
  auto f = [&](const Image& s) { return ScalarGaussian{3.0 * s.data[0], delta}; };

  for (std::size_t T : {64, 256, 4096}) {
    const auto j = propagate_regression(x, f, McConfig{T, {2023, 0}, 1});
    std::printf("T=%5zu  mu_hat=%.4f  var_prop=%.4f  mu_delta=%.4f  var_joint=%.4f\n", T, j.mu_hat, j.var_prop,
                j.mu_delta, j.var_joint);
  }
  std::printf("closed form       mu=%.4f      var_prop=%.4f  mu_delta=%.4f  var_joint=%.4f\n", 1.5, 0.36, 0.25, 0.61);
}
