#include "eqsolve/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace eqsolve::optim {

namespace {

void check_aligned(const std::vector<ParamRef>& params,
                   const std::vector<Tensor>& grads) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("optimizer: params/grads mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].tensor->size() != grads[i].size()) {
      throw std::invalid_argument("optimizer: gradient shape mismatch at " +
                                  params[i].name);
    }
  }
}

}  // namespace

void Sgd::step(const std::vector<ParamRef>& params,
               const std::vector<Tensor>& grads) {
  check_aligned(params, grads);
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* p = params[i].tensor->mutable_data();
    const auto& g = grads[i].data();
    for (std::size_t j = 0; j < grads[i].size(); ++j) p[j] -= lr_ * g[j];
  }
}

void Adam::step(const std::vector<ParamRef>& params,
                const std::vector<Tensor>& grads) {
  check_aligned(params, grads);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Slot& s = slots_[params[i].tensor];
    const std::size_t n = grads[i].size();
    if (s.m.size() != n) {
      s.m.assign(n, 0.0);
      s.v.assign(n, 0.0);
      s.t = 0;
    }
    ++s.t;
    const double bc1 = 1.0 - std::pow(beta1_, s.t);
    const double bc2 = 1.0 - std::pow(beta2_, s.t);
    double* p = params[i].tensor->mutable_data();
    const auto& g = grads[i].data();
    for (std::size_t j = 0; j < n; ++j) {
      s.m[j] = beta1_ * s.m[j] + (1.0 - beta1_) * g[j];
      s.v[j] = beta2_ * s.v[j] + (1.0 - beta2_) * g[j] * g[j];
      const double mhat = s.m[j] / bc1;
      const double vhat = s.v[j] / bc2;
      p[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

}  // namespace eqsolve::optim
