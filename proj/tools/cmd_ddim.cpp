#include <chrono>

#include "commands.hpp"
#include "eqsolve/zoo.hpp"

namespace eqsolve::cli {

int run_ddim_demo(const DeqArgs& deq_args, const DdimArgs& args) {
  RecordWriter out(deq_args.out_path);
  emit_header(out, "ddim-demo", deq_args,
              json{{"T", args.T},
                   {"dim", args.dim},
                   {"stochastic", args.stochastic}});

  auto chain = zoo::make_toy_chain(args.T, args.dim, deq_args.seed,
                                   !args.stochastic);
  auto denoiser = zoo::make_toy_denoiser(args.T, args.dim, deq_args.seed + 1);

  const auto start = std::chrono::steady_clock::now();
  auto sequential = zoo::ddim_sequential(chain, denoiser);
  out.write(json{{"record", "run"},
                 {"sampler", "sequential"},
                 {"denoiser_evals", args.T},
                 {"wall_ms", wall_ms_since(start, deq_args.timing)}});

  // head-to-head: the requested solver plus the plain iteration baseline
  std::vector<std::string> solver_names = {deq_args.f_solver};
  if (deq_args.f_solver != "fixed_point_iter") {
    solver_names.push_back("fixed_point_iter");
  }
  json summary{{"record", "summary"}, {"T", args.T}};
  bool non_finite = false;
  for (const std::string& name : solver_names) {
    solvers::SolverConfig cfg;
    cfg.kind = solvers::solver_kind_from_string(name);
    cfg.max_iter = deq_args.f_max_iter;
    cfg.tol = deq_args.f_tol;
    cfg.m = deq_args.m;
    cfg.tau = deq_args.tau;
    cfg.lam = deq_args.lam;
    cfg.alpha = deq_args.alpha;

    const auto t0 = std::chrono::steady_clock::now();
    json rec{{"record", "run"}, {"sampler", "parallel"}, {"solver", name}};
    try {
      auto par = zoo::ddim_parallel(chain, denoiser, cfg);
      double max_dev = 0.0;
      for (int i = 0; i < args.T; ++i) {
        max_dev = std::max(
            max_dev,
            (par.trajectory[i] - sequential[i]).cwiseAbs().maxCoeff());
      }
      rec["operator_iterations"] = par.solver.steps;
      rec["converged"] = par.solver.converged;
      rec["max_abs_deviation"] = max_dev;
      summary[name] = json{{"operator_iterations", par.solver.steps},
                           {"max_abs_deviation", max_dev},
                           {"converged", par.solver.converged}};
    } catch (const NonFiniteError& e) {
      non_finite = true;
      rec["error"] = e.what();
    }
    rec["wall_ms"] = wall_ms_since(t0, deq_args.timing);
    out.write(rec);
  }
  summary["non_finite"] = non_finite;
  out.write(summary);
  return non_finite ? 1 : 0;
}

}  // namespace eqsolve::cli
