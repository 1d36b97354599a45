#pragma once

#include <memory>
#include <string>
#include <vector>

#include "eqsolve/tensor.hpp"

namespace eqsolve::norm {
class NormSet;
}

namespace eqsolve {

struct ParamRef {
  std::string name;
  Tensor* tensor;
  bool weight_matrix = false;  // eligible for weight reparameterization
};

// Anything with named parameter slots. Decorated weights keep their slot
// (the slot holds the cached effective weight); the raw weight and scale
// live in the module's NormSet.
class Module {
 public:
  virtual ~Module() = default;
  virtual std::vector<ParamRef> param_refs() = 0;

  std::shared_ptr<norm::NormSet>& norm_set() { return norm_set_; }

 private:
  std::shared_ptr<norm::NormSet> norm_set_;
};

}  // namespace eqsolve
