#pragma once

#include <functional>
#include <vector>

#include "eqsolve/solvers.hpp"
#include "eqsolve/tensor.hpp"

namespace eqsolve::backward {

// State as an ordered list of tensor parts (multi-variate systems pass
// several; single-variate systems pass one).
using Parts = std::vector<Tensor>;
using PartsFn = std::function<Parts(const Parts&)>;

struct GradConfig {
  enum class Mode { IFT, PG };
  Mode mode = Mode::IFT;
  solvers::SolverConfig b_solver = default_b_solver();
  int K = 1;           // phantom unroll steps (PG)
  double tau = 1.0;    // phantom damping in (0, 1]
  bool grad_into_init = false;

  static solvers::SolverConfig default_b_solver() {
    solvers::SolverConfig cfg;
    cfg.kind = solvers::SolverKind::fixed_point_iter;
    cfg.max_iter = 30;
    cfg.tol = 1e-6;
    return cfg;
  }
  void validate() const;
};

struct ParamGrads {
  std::vector<Tensor> grads;       // aligned with the params argument
  std::vector<Tensor> init_grads;  // d/dz_p per part, when requested (PG)
};

Eigen::VectorXd flatten_parts(const Parts& parts);
Parts unflatten_parts(const Eigen::VectorXd& v, const Parts& like);

// Implicit-function-theorem gradients: solves g^T = g^T (df/dz) + upstream
// with the configured backward solver over the recorded tape of one f call
// at z_star, then returns g^T (df/dtheta) from the same tape.
ParamGrads ift_backward(const PartsFn& f, const Parts& z_star,
                        const Parts& upstream,
                        const std::vector<Tensor*>& params,
                        const GradConfig& cfg);

// Phantom gradients: records K damped unroll steps
// z^{p+1} = tau f(z^p) + (1 - tau) z^p starting at the solver estimate z_p
// and backpropagates upstream through them.
ParamGrads phantom_grad(const PartsFn& f, const Parts& z_p,
                        const Parts& upstream,
                        const std::vector<Tensor*>& params,
                        const GradConfig& cfg);

// Per-state gradients for a sampled solver trajectory: every state except
// the last is differentiated with PG; the last follows cfg.mode.
std::vector<ParamGrads> backward_dispatch(const PartsFn& f,
                                          const std::vector<Parts>& states,
                                          const std::vector<Parts>& upstreams,
                                          const std::vector<Tensor*>& params,
                                          const GradConfig& cfg);

}  // namespace eqsolve::backward
