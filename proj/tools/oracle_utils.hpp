#pragma once

// Reference helpers for the grad-check harness.

#include <functional>
#include <random>

#include "eqsolve/tensor.hpp"

namespace eqsolve::cli {

inline Tensor gaussian_tensor(Shape shape, std::uint64_t seed,
                              double scl = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  std::vector<double> d(numel(shape));
  for (double& x : d) x = scl * gauss(rng);
  return Tensor(std::move(shape), std::move(d));
}

inline Eigen::VectorXd central_diff(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x, double h = 1e-5) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = xp[i];
    xp[i] = orig + h;
    const double fp = f(xp);
    xp[i] = orig - h;
    const double fm = f(xp);
    xp[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace eqsolve::cli
