#include <chrono>

#include "commands.hpp"
#include "eqsolve/zoo.hpp"
#include "oracle_utils.hpp"

namespace eqsolve::cli {

namespace {

using backward::Parts;

struct Problem {
  zoo::ContractiveTanhDeq model;
  Tensor x;
  Tensor upstream;

  Problem(int dim, std::uint64_t seed)
      : model(dim, seed),
        x(gaussian_tensor({static_cast<std::size_t>(dim), 1}, seed + 1)),
        upstream(gaussian_tensor({static_cast<std::size_t>(dim), 1}, seed + 2)) {}

  backward::PartsFn parts_fn() {
    return [this](const Parts& parts) {
      deq::StateGroup g;
      g.parts = parts;
      return model.equilibrium(g, x).parts;
    };
  }

  Eigen::VectorXd solve(double tol) {
    solvers::SolverConfig cfg;
    cfg.max_iter = 4000;
    cfg.tol = tol;
    auto res = solvers::fixed_point_iter(
        [&](const Eigen::VectorXd& z) {
          deq::StateGroup g(Tensor::from_vec(z).with_shape(
              {static_cast<std::size_t>(model.dim), 1}));
          return deq::flatten(model.equilibrium(g, x));
        },
        Eigen::VectorXd::Zero(model.dim), cfg);
    return res.z_best;
  }
};

}  // namespace

int run_grad_check(const DeqArgs& deq_args, const GradCheckArgs& args) {
  RecordWriter out(deq_args.out_path);
  emit_header(out, "grad-check", deq_args,
              json{{"dim", args.dim}, {"problems", args.problems}});
  const auto start = std::chrono::steady_clock::now();

  json summary{{"record", "summary"}};

  if (deq_args.ift) {
    // IFT parameter gradients against central finite differences of the
    // full solve-then-decode pipeline
    double max_rel = 0.0;
    for (int p = 0; p < 3; ++p) {
      Problem prob(args.dim, deq_args.seed * 7919ull + p);
      Eigen::VectorXd z_star = prob.solve(1e-13);
      const std::size_t d = prob.model.dim;
      Parts zs = {Tensor::from_vec(z_star).with_shape({d, 1})};
      Parts up = {prob.upstream};

      backward::GradConfig cfg;
      cfg.b_solver.kind =
          solvers::solver_kind_from_string(deq_args.b_solver);
      cfg.b_solver.max_iter = 400;
      cfg.b_solver.tol = 1e-13;
      auto params = prob.model.param_refs();
      std::vector<Tensor*> ptrs;
      for (auto& ref : params) ptrs.push_back(ref.tensor);
      auto pg = backward::ift_backward(prob.parts_fn(), zs, up, ptrs, cfg);

      for (std::size_t pi = 0; pi < ptrs.size(); ++pi) {
        Eigen::VectorXd fd = central_diff(
            [&](const Eigen::VectorXd& flat) {
              Tensor saved = *ptrs[pi];
              *ptrs[pi] = Tensor::from_vec(flat).with_shape(saved.shape());
              double v = prob.upstream.vec().dot(prob.solve(1e-13));
              *ptrs[pi] = saved;
              return v;
            },
            ptrs[pi]->vec());
        for (Eigen::Index i = 0; i < fd.size(); ++i) {
          const double denom = std::max(std::abs(fd[i]), 1e-6);
          max_rel = std::max(
              max_rel, std::abs(pg.grads[pi].vec()[i] - fd[i]) / denom);
        }
      }
      out.write(json{{"record", "check"},
                     {"kind", "ift_vs_fd"},
                     {"problem", p},
                     {"max_rel_err", max_rel}});
    }
    summary["max_rel_err_ift"] = max_rel;
  }

  if (deq_args.f_max_iter == 0 && deq_args.tau == 1.0 && !deq_args.ift) {
    // BPTT equivalence: PG from z0 with tau=1 against a direct unroll
    double max_delta = 0.0;
    for (int p = 0; p < 3; ++p) {
      Problem prob(args.dim, deq_args.seed * 104729ull + p);
      const std::size_t d = prob.model.dim;
      Parts z0 = {Tensor::zeros({d, 1})};
      Parts up = {prob.upstream};
      backward::GradConfig cfg;
      cfg.mode = backward::GradConfig::Mode::PG;
      cfg.K = deq_args.grad_steps;
      cfg.tau = 1.0;
      auto params = prob.model.param_refs();
      std::vector<Tensor*> ptrs;
      for (auto& ref : params) ptrs.push_back(ref.tensor);
      auto pg = backward::phantom_grad(prob.parts_fn(), z0, up, ptrs, cfg);

      Tape tape;
      for (Tensor* t : ptrs) t->attach_leaf(tape);
      deq::StateGroup cur(Tensor::zeros({d, 1}));
      for (int k = 0; k < deq_args.grad_steps; ++k) {
        cur = prob.model.equilibrium(cur, prob.x);
      }
      const Tensor outs[] = {cur.primary()};
      const Tensor seeds[] = {prob.upstream};
      std::vector<Tensor> wrt;
      for (Tensor* t : ptrs) wrt.push_back(*t);
      auto direct = backward_from(outs, seeds, wrt);
      for (Tensor* t : ptrs) t->detach();

      for (std::size_t pi = 0; pi < ptrs.size(); ++pi) {
        max_delta = std::max(
            max_delta,
            (pg.grads[pi].vec() - direct[pi].vec()).cwiseAbs().maxCoeff());
      }
      out.write(json{{"record", "check"},
                     {"kind", "pg_vs_bptt"},
                     {"problem", p},
                     {"max_delta", max_delta}});
    }
    summary["pg_bptt_delta"] = max_delta;
  }

  if (!deq_args.ift) {
    // descent-direction statistics over seeded problems
    int positive = 0;
    for (int p = 0; p < args.problems; ++p) {
      Problem prob(args.dim, deq_args.seed * 65537ull + p);
      Eigen::VectorXd z_star = prob.solve(1e-12);
      const std::size_t d = prob.model.dim;
      Parts zs = {Tensor::from_vec(z_star).with_shape({d, 1})};
      Parts up = {prob.upstream};
      auto params = prob.model.param_refs();
      std::vector<Tensor*> ptrs;
      for (auto& ref : params) ptrs.push_back(ref.tensor);

      backward::GradConfig ift_cfg;
      ift_cfg.b_solver.max_iter = 400;
      ift_cfg.b_solver.tol = 1e-12;
      auto g_ift = backward::ift_backward(prob.parts_fn(), zs, up, ptrs, ift_cfg);

      backward::GradConfig pg_cfg;
      pg_cfg.mode = backward::GradConfig::Mode::PG;
      pg_cfg.K = deq_args.grad_steps;
      pg_cfg.tau = deq_args.tau;
      auto g_pg = backward::phantom_grad(prob.parts_fn(), zs, up, ptrs, pg_cfg);

      double dot = 0.0;
      for (std::size_t pi = 0; pi < ptrs.size(); ++pi) {
        dot += g_ift.grads[pi].vec().dot(g_pg.grads[pi].vec());
      }
      if (dot > 0.0) ++positive;
    }
    summary["positive_inner_fraction"] =
        static_cast<double>(positive) / args.problems;
  }

  summary["wall_ms"] = wall_ms_since(start, deq_args.timing);
  out.write(summary);
  return 0;
}

}  // namespace eqsolve::cli
