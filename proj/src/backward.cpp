#include "eqsolve/backward.hpp"

#include <spdlog/spdlog.h>

#include <stdexcept>

namespace eqsolve::backward {

namespace {

// Attaches tensors to a tape for the duration of a gradient pass.
class AttachGuard {
 public:
  AttachGuard(const std::vector<Tensor*>& params, Tape& tape) {
    attached_.reserve(params.size());
    for (Tensor* p : params) {
      p->attach_leaf(tape);
      attached_.push_back(p);
    }
  }
  ~AttachGuard() {
    for (Tensor* p : attached_) p->detach();
  }
  AttachGuard(const AttachGuard&) = delete;
  AttachGuard& operator=(const AttachGuard&) = delete;

 private:
  std::vector<Tensor*> attached_;
};

void check_parts(const Parts& a, const Parts& b, const char* what) {
  if (a.size() != b.size()) {
    throw std::invalid_argument(std::string(what) + ": part count mismatch");
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].shape() != b[i].shape()) {
      throw std::invalid_argument(std::string(what) + ": part " +
                                  std::to_string(i) + " shape mismatch");
    }
  }
}

// backward_from over the recorded subset of outs; zero gradients when f
// ignored its inputs entirely.
std::vector<Tensor> sweep(const Parts& outs, const Parts& seeds,
                          const std::vector<Tensor>& wrt) {
  std::vector<Tensor> rec_outs, rec_seeds;
  for (std::size_t i = 0; i < outs.size(); ++i) {
    if (outs[i].recorded()) {
      rec_outs.push_back(outs[i]);
      rec_seeds.push_back(seeds[i]);
    }
  }
  if (rec_outs.empty()) {
    std::vector<Tensor> zeros;
    zeros.reserve(wrt.size());
    for (const Tensor& w : wrt) zeros.push_back(Tensor::zeros(w.shape()));
    return zeros;
  }
  return backward_from(rec_outs, rec_seeds, wrt);
}

std::vector<Tensor> deref(const std::vector<Tensor*>& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (Tensor* p : params) out.push_back(*p);
  return out;
}

solvers::SolverResult run_b_solver(const solvers::StateFn& h,
                                   const Eigen::VectorXd& g0,
                                   const solvers::SolverConfig& cfg) {
  switch (cfg.kind) {
    case solvers::SolverKind::fixed_point_iter:
      return solvers::fixed_point_iter(h, g0, cfg);
    case solvers::SolverKind::anderson:
      return solvers::anderson(h, g0, cfg);
    case solvers::SolverKind::broyden:
      return solvers::broyden(h, g0, cfg);
  }
  throw std::logic_error("ift_backward: unknown backward solver");
}

}  // namespace

void GradConfig::validate() const {
  if (mode == Mode::PG) {
    if (K < 1) throw std::invalid_argument("GradConfig: K must be >= 1");
    if (!(tau > 0.0 && tau <= 1.0)) {
      throw std::invalid_argument("GradConfig: tau must be in (0,1]");
    }
  } else {
    b_solver.validate();
  }
}

Eigen::VectorXd flatten_parts(const Parts& parts) {
  std::size_t total = 0;
  for (const Tensor& p : parts) total += p.size();
  Eigen::VectorXd v(total);
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    v.segment(off, p.size()) = p.vec();
    off += p.size();
  }
  return v;
}

Parts unflatten_parts(const Eigen::VectorXd& v, const Parts& like) {
  Parts out;
  out.reserve(like.size());
  std::size_t off = 0;
  for (const Tensor& p : like) {
    Eigen::VectorXd seg = v.segment(off, p.size());
    out.push_back(Tensor::from_vec(seg).with_shape(p.shape()));
    off += p.size();
  }
  if (off != static_cast<std::size_t>(v.size())) {
    throw std::invalid_argument("unflatten_parts: length mismatch");
  }
  return out;
}

ParamGrads ift_backward(const PartsFn& f, const Parts& z_star,
                        const Parts& upstream,
                        const std::vector<Tensor*>& params,
                        const GradConfig& cfg) {
  cfg.b_solver.validate();
  check_parts(z_star, upstream, "ift_backward");

  Tape tape;
  AttachGuard guard(params, tape);
  Parts z_leaves;
  z_leaves.reserve(z_star.size());
  for (const Tensor& z : z_star) {
    Tensor leaf = z.detached();
    leaf.attach_leaf(tape);
    z_leaves.push_back(leaf);
  }
  Parts outs = f(z_leaves);
  check_parts(outs, z_star, "ift_backward: f output");

  const Eigen::VectorXd z_flat = flatten_parts(z_star);
  const Eigen::VectorXd out_flat = flatten_parts(outs);
  const double fwd_res = solvers::rel_residual(out_flat, z_flat);
  if (fwd_res > 10.0 * cfg.b_solver.tol) {
    spdlog::warn(
        "ift_backward: forward residual {:.3e} above 10*b_tol; implicit "
        "gradients may be off",
        fwd_res);
  }

  const Eigen::VectorXd upstream_flat = flatten_parts(upstream);
  auto h = [&](const Eigen::VectorXd& gv) -> Eigen::VectorXd {
    Parts seeds = unflatten_parts(gv, z_star);
    std::vector<Tensor> jt_g = sweep(outs, seeds, z_leaves);
    return flatten_parts(jt_g) + upstream_flat;
  };
  auto res = run_b_solver(h, Eigen::VectorXd::Zero(z_flat.size()),
                          cfg.b_solver);
  if (!res.converged) {
    spdlog::debug("ift_backward: backward solve stopped at residual {:.3e}",
                  res.residuals.empty() ? -1.0 : res.residuals.back());
  }

  Parts g_parts = unflatten_parts(res.z_best, z_star);
  ParamGrads pg;
  pg.grads = sweep(outs, g_parts, deref(params));
  return pg;
}

ParamGrads phantom_grad(const PartsFn& f, const Parts& z_p,
                        const Parts& upstream,
                        const std::vector<Tensor*>& params,
                        const GradConfig& cfg) {
  if (cfg.K < 1) throw std::invalid_argument("phantom_grad: K must be >= 1");
  if (!(cfg.tau > 0.0 && cfg.tau <= 1.0)) {
    throw std::invalid_argument("phantom_grad: tau must be in (0,1]");
  }
  check_parts(z_p, upstream, "phantom_grad");

  Tape tape;
  AttachGuard guard(params, tape);
  Parts cur;
  cur.reserve(z_p.size());
  for (const Tensor& z : z_p) {
    Tensor leaf = z.detached();
    leaf.attach_leaf(tape);
    cur.push_back(leaf);
  }
  const Parts init_leaves = cur;

  for (int k = 0; k < cfg.K; ++k) {
    Parts fz = f(cur);
    check_parts(fz, z_p, "phantom_grad: f output");
    if (cfg.tau == 1.0) {
      cur = std::move(fz);
    } else {
      Parts mixed;
      mixed.reserve(cur.size());
      for (std::size_t i = 0; i < cur.size(); ++i) {
        mixed.push_back(
            add(scale(fz[i], cfg.tau), scale(cur[i], 1.0 - cfg.tau)));
      }
      cur = std::move(mixed);
    }
  }

  std::vector<Tensor> wrt = deref(params);
  if (cfg.grad_into_init) {
    for (const Tensor& leaf : init_leaves) wrt.push_back(leaf);
  }
  std::vector<Tensor> grads = sweep(cur, upstream, wrt);

  ParamGrads pg;
  pg.grads.assign(grads.begin(), grads.begin() + params.size());
  if (cfg.grad_into_init) {
    pg.init_grads.assign(grads.begin() + params.size(), grads.end());
  }
  return pg;
}

std::vector<ParamGrads> backward_dispatch(const PartsFn& f,
                                          const std::vector<Parts>& states,
                                          const std::vector<Parts>& upstreams,
                                          const std::vector<Tensor*>& params,
                                          const GradConfig& cfg) {
  if (states.empty()) {
    throw std::invalid_argument("backward_dispatch: states must be non-empty");
  }
  if (states.size() != upstreams.size()) {
    throw std::invalid_argument("backward_dispatch: upstream count mismatch");
  }
  std::vector<ParamGrads> out;
  out.reserve(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    const bool last = (i + 1 == states.size());
    if (!last || cfg.mode == GradConfig::Mode::PG) {
      out.push_back(phantom_grad(f, states[i], upstreams[i], params, cfg));
    } else {
      out.push_back(ift_backward(f, states[i], upstreams[i], params, cfg));
    }
  }
  return out;
}

}  // namespace eqsolve::backward
