#pragma once

#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "eqsolve/backward.hpp"
#include "eqsolve/module.hpp"
#include "eqsolve/norm.hpp"
#include "eqsolve/optim.hpp"
#include "eqsolve/reg.hpp"
#include "eqsolve/solvers.hpp"
#include "eqsolve/tensor.hpp"

namespace eqsolve::deq {

// Ordered multi-variate state, e.g. z = [h, c].
struct StateGroup {
  std::vector<Tensor> parts;

  StateGroup() = default;
  explicit StateGroup(Tensor single) { parts.push_back(std::move(single)); }
  explicit StateGroup(std::vector<Tensor> p) : parts(std::move(p)) {}

  const Tensor& primary() const { return parts.front(); }
  std::size_t total_size() const;
};

struct GroupLayout {
  std::vector<Shape> shapes;
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
};

GroupLayout layout_of(const StateGroup& g);
Eigen::VectorXd flatten(const StateGroup& g);
StateGroup unflatten(const Eigen::VectorXd& v, const GroupLayout& layout);

enum class InitMode { zeros, mixed, provided };

struct DeqConfig {
  solvers::SolverConfig f_solver;
  backward::GradConfig grad;
  std::optional<reg::CorrectionConfig> correction;
  InitMode init = InitMode::zeros;
  double jac_reg_weight = 0.0;  // plain JR on the best state
  int n_probes = 1;
};

struct DeqInfo {
  std::vector<double> residuals;
  int steps = 0;
  bool converged = false;
  double residual = 0.0;  // lowest observed relative residual
};

using GroupFn = std::function<StateGroup(const StateGroup&)>;

// Runs the configured solver over the flattened group; sampled states per
// cfg.correction (the best state always last). Shape drift in f is an error.
std::pair<std::vector<StateGroup>, DeqInfo> deq_forward(const GroupFn& f,
                                                        const StateGroup& z0,
                                                        const DeqConfig& cfg);

// An equilibrium model: f_theta over a state group with injected input,
// a decoder, and parameter slots (via Module).
class DeqModel : public Module {
 public:
  virtual StateGroup equilibrium(const StateGroup& z, const Tensor& x) = 0;
  virtual Tensor decode(const StateGroup& z) = 0;
  virtual StateGroup initial_state(const Tensor& x) = 0;  // zeros, sized for x
};

struct Batch {
  Tensor x;
  Tensor y;
};

struct StepMetrics {
  double loss = 0.0;
  double residual = 0.0;
  int steps = 0;
  bool converged = false;
  std::vector<StateGroup> states;  // solver samples, for fixed-point reuse
  StateGroup output_state;         // state the training prediction decoded
};

struct StepOptions {
  const StateGroup* z0 = nullptr;   // used by InitMode::provided
  reg::ProbeRng* rng = nullptr;     // mixed init and JR probes
};

Tensor mse_loss(const Tensor& y, const Tensor& pred);

// Inference path matching the training prediction: solve, then apply the
// same K damped refinement steps the phantom backward unrolls (PG mode).
StateGroup forward_output(DeqModel& model, const Tensor& x,
                          const DeqConfig& cfg);

// One optimization step: reset_norm once, solve the equilibrium, assemble
// the configured loss (correction / JR), push gradients through
// backward_dispatch and the norm factors, apply the optimizer.
StepMetrics train_step(DeqModel& model, const Batch& batch,
                       optim::Optimizer& opt, const DeqConfig& cfg,
                       const StepOptions& options = {});

}  // namespace eqsolve::deq
