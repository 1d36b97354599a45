#pragma once

#include <unordered_map>
#include <vector>

#include "eqsolve/module.hpp"
#include "eqsolve/tensor.hpp"

namespace eqsolve::optim {

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(const std::vector<ParamRef>& params,
                    const std::vector<Tensor>& grads) = 0;
};

class Sgd : public Optimizer {
 public:
  explicit Sgd(double lr) : lr_(lr) {}
  void step(const std::vector<ParamRef>& params,
            const std::vector<Tensor>& grads) override;

 private:
  double lr_;
};

class Adam : public Optimizer {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(const std::vector<ParamRef>& params,
            const std::vector<Tensor>& grads) override;

 private:
  struct Slot {
    std::vector<double> m, v;
    long t = 0;
  };
  double lr_, beta1_, beta2_, eps_;
  std::unordered_map<Tensor*, Slot> slots_;
};

}  // namespace eqsolve::optim
