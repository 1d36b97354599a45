#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "eqsolve/tensor.hpp"

namespace eqsolve::solvers {

using Vec = Eigen::VectorXd;
using StateFn = std::function<Vec(const Vec&)>;

enum class SolverKind { fixed_point_iter, anderson, broyden };

SolverKind solver_kind_from_string(const std::string& name);
std::string to_string(SolverKind kind);

struct SolverConfig {
  SolverKind kind = SolverKind::fixed_point_iter;
  int max_iter = 40;     // >= 0; 0 returns z0 untouched
  double tol = 1e-6;     // relative residual threshold
  int m = 6;             // Anderson window m (m+1 estimates) / Broyden rank budget
  double tau = 1.0;      // damping in (0, 1]
  double alpha = 1.0;    // Broyden step size in (0, 1]
  double lam = 1e-4;     // Anderson least-squares regularizer, relative to Gram scale

  void validate() const;
};

struct SolverEvent {
  enum class Kind { anderson_ls_fallback, broyden_update_skipped };
  int step;
  Kind kind;
};

struct SolverResult {
  Vec z_best;                     // iterate with the lowest observed residual
  std::vector<Vec> states;        // sampled intermediate states (solve() only)
  std::vector<double> residuals;  // one entry per function evaluation
  int steps = 0;                  // function evaluations used
  bool converged = false;
  std::vector<SolverEvent> events;
};

// ||f_z - z|| / (||z|| + 1e-8)
double rel_residual(const Vec& f_z, const Vec& z);

SolverResult fixed_point_iter(const StateFn& f, const Vec& z0,
                              const SolverConfig& cfg);
SolverResult anderson(const StateFn& f, const Vec& z0, const SolverConfig& cfg);
SolverResult broyden(const StateFn& f, const Vec& z0, const SolverConfig& cfg);

// Intermediate-state sampling request. Explicit `indexing` wins over
// `n_states`; n_states=k samples at iterations ceil(j*max_iter/k), j=1..k.
// The returned list always ends with the best iterate.
struct SampleSpec {
  std::vector<int> indexing;
  int n_states = 1;
};

SolverResult solve(const StateFn& f, const Vec& z0, const SolverConfig& cfg,
                   const SampleSpec& spec = {});

}  // namespace eqsolve::solvers
