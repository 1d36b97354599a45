#include "eqsolve/deq.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace eqsolve::deq {

namespace {

// Attaches the module's parameter slots and a group of state leaves to one
// tape; detaches on scope exit.
class PassGuard {
 public:
  PassGuard(std::vector<ParamRef>& slots, Tape& tape) {
    for (ParamRef& ref : slots) {
      ref.tensor->attach_leaf(tape);
      attached_.push_back(ref.tensor);
    }
  }
  ~PassGuard() {
    for (Tensor* t : attached_) t->detach();
  }
  PassGuard(const PassGuard&) = delete;
  PassGuard& operator=(const PassGuard&) = delete;

 private:
  std::vector<Tensor*> attached_;
};

std::vector<Tensor> attach_state(const StateGroup& g, Tape& tape) {
  std::vector<Tensor> leaves;
  leaves.reserve(g.parts.size());
  for (const Tensor& p : g.parts) {
    Tensor leaf = p.detached();
    leaf.attach_leaf(tape);
    leaves.push_back(leaf);
  }
  return leaves;
}

// Hutchinson estimate of ||J_f||_F^2 over a multi-part state, kept on the
// tape so a second sweep yields parameter gradients.
Tensor group_jac_reg(const std::vector<Tensor>& f_parts,
                     const std::vector<Tensor>& z_leaves, int n_probes,
                     reg::ProbeRng& rng) {
  std::vector<Tensor> rec_outs, rec_z;
  for (std::size_t i = 0; i < f_parts.size(); ++i) {
    if (f_parts[i].recorded()) {
      rec_outs.push_back(f_parts[i]);
      rec_z.push_back(z_leaves[i]);
    }
  }
  if (rec_outs.empty()) return Tensor::scalar(0.0);
  Tensor total = Tensor::scalar(0.0);
  for (int p = 0; p < n_probes; ++p) {
    std::vector<Tensor> seeds;
    seeds.reserve(rec_outs.size());
    for (const Tensor& o : rec_outs) {
      seeds.push_back(rng.gaussian_tensor(o.shape()));
    }
    auto gz = backward_from(rec_outs, seeds, rec_z, /*create_graph=*/true);
    for (const Tensor& g : gz) total = add(total, sum(mul(g, g)));
  }
  return scale(total, 1.0 / n_probes);
}

}  // namespace

std::size_t StateGroup::total_size() const {
  std::size_t n = 0;
  for (const Tensor& p : parts) n += p.size();
  return n;
}

GroupLayout layout_of(const StateGroup& g) {
  if (g.parts.empty()) {
    throw std::invalid_argument("StateGroup: at least one part required");
  }
  GroupLayout layout;
  for (const Tensor& p : g.parts) {
    layout.shapes.push_back(p.shape());
    layout.offsets.push_back(layout.total);
    layout.total += p.size();
  }
  return layout;
}

Eigen::VectorXd flatten(const StateGroup& g) {
  Eigen::VectorXd v(g.total_size());
  std::size_t off = 0;
  for (const Tensor& p : g.parts) {
    v.segment(off, p.size()) = p.vec();
    off += p.size();
  }
  return v;
}

StateGroup unflatten(const Eigen::VectorXd& v, const GroupLayout& layout) {
  if (static_cast<std::size_t>(v.size()) != layout.total) {
    throw std::invalid_argument("unflatten: length mismatch");
  }
  StateGroup g;
  for (std::size_t i = 0; i < layout.shapes.size(); ++i) {
    Eigen::VectorXd seg =
        v.segment(layout.offsets[i], numel(layout.shapes[i]));
    g.parts.push_back(Tensor::from_vec(seg).with_shape(layout.shapes[i]));
  }
  return g;
}

std::pair<std::vector<StateGroup>, DeqInfo> deq_forward(const GroupFn& f,
                                                        const StateGroup& z0,
                                                        const DeqConfig& cfg) {
  const GroupLayout layout = layout_of(z0);
  solvers::StateFn vec_f = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
    StateGroup g = unflatten(v, layout);
    StateGroup out = f(g);
    if (out.parts.size() != layout.shapes.size()) {
      throw std::invalid_argument("deq_forward: f changed the part count");
    }
    for (std::size_t i = 0; i < out.parts.size(); ++i) {
      if (out.parts[i].shape() != layout.shapes[i]) {
        throw std::invalid_argument(
            "deq_forward: shape drift in part " + std::to_string(i) + ": " +
            shape_str(layout.shapes[i]) + " -> " +
            shape_str(out.parts[i].shape()));
      }
    }
    return flatten(out);
  };

  solvers::SampleSpec spec;
  if (cfg.correction) {
    spec.indexing = cfg.correction->indexing;
    spec.n_states = cfg.correction->n_states;
  }
  auto res = solvers::solve(vec_f, flatten(z0), cfg.f_solver, spec);

  std::vector<StateGroup> states;
  states.reserve(res.states.size());
  for (const auto& s : res.states) states.push_back(unflatten(s, layout));

  DeqInfo info;
  info.residuals = std::move(res.residuals);
  info.steps = res.steps;
  info.converged = res.converged;
  info.residual = info.residuals.empty()
                      ? std::numeric_limits<double>::quiet_NaN()
                      : *std::min_element(info.residuals.begin(),
                                          info.residuals.end());
  return {std::move(states), std::move(info)};
}

Tensor mse_loss(const Tensor& y, const Tensor& pred) {
  Tensor d = sub(pred, y);
  return scale(sum(mul(d, d)), 1.0 / static_cast<double>(d.size()));
}

StateGroup forward_output(DeqModel& model, const Tensor& x,
                          const DeqConfig& cfg) {
  GroupFn f = [&](const StateGroup& z) { return model.equilibrium(z, x); };
  auto [states, info] = deq_forward(f, model.initial_state(x), cfg);
  StateGroup out = states.back();
  if (cfg.grad.mode == backward::GradConfig::Mode::PG) {
    for (int k = 0; k < cfg.grad.K; ++k) {
      StateGroup fz = model.equilibrium(out, x);
      if (cfg.grad.tau == 1.0) {
        out = std::move(fz);
      } else {
        for (std::size_t p = 0; p < out.parts.size(); ++p) {
          out.parts[p] = add(scale(fz.parts[p], cfg.grad.tau),
                             scale(out.parts[p], 1.0 - cfg.grad.tau));
        }
      }
    }
  }
  return out;
}

StepMetrics train_step(DeqModel& model, const Batch& batch,
                       optim::Optimizer& opt, const DeqConfig& cfg,
                       const StepOptions& options) {
  norm::reset_norm(model);

  StateGroup z0;
  switch (cfg.init) {
    case InitMode::zeros:
      z0 = model.initial_state(batch.x);
      break;
    case InitMode::mixed: {
      if (!options.rng) {
        throw std::invalid_argument("train_step: mixed init needs a rng");
      }
      z0 = model.initial_state(batch.x);
      for (Tensor& p : z0.parts) p = reg::mixed_init(p.shape(), *options.rng);
      break;
    }
    case InitMode::provided:
      if (!options.z0) {
        throw std::invalid_argument("train_step: provided init without z0");
      }
      z0 = *options.z0;
      break;
  }

  GroupFn f = [&](const StateGroup& z) {
    return model.equilibrium(z, batch.x);
  };
  auto [states, info] = deq_forward(f, z0, cfg);
  const std::size_t n = states.size();

  // per-state supervision weights: gamma^{n-1-i} for supervise_states,
  // otherwise only the final state carries loss
  std::vector<double> weights(n, 0.0);
  weights.back() = 1.0;
  const bool supervise_all =
      cfg.correction && cfg.correction->variant ==
                            reg::CorrectionConfig::Variant::supervise_states;
  if (supervise_all) {
    for (std::size_t i = 0; i < n; ++i) {
      weights[i] = std::pow(cfg.correction->gamma,
                            static_cast<double>(n - 1 - i));
    }
  }

  std::vector<ParamRef> slots = model.param_refs();
  std::vector<Tensor*> slot_ptrs;
  slot_ptrs.reserve(slots.size());
  for (ParamRef& ref : slots) slot_ptrs.push_back(ref.tensor);

  std::vector<Tensor> slot_grads;
  slot_grads.reserve(slots.size());
  for (ParamRef& ref : slots) {
    slot_grads.push_back(Tensor::zeros(ref.tensor->shape()));
  }
  auto accumulate = [&](std::size_t i, const Tensor& g, double w) {
    if (w == 0.0) return;
    slot_grads[i] = add(slot_grads[i], w == 1.0 ? g : scale(g, w));
  };

  // States are refined by the same K damped steps the phantom backward
  // unrolls, so losses and gradients see the same prediction; the final
  // state under IFT is used as-is (the solver's equilibrium estimate).
  auto refine = [&](const StateGroup& z) {
    StateGroup cur = z;
    for (int k = 0; k < cfg.grad.K; ++k) {
      StateGroup fz = model.equilibrium(cur, batch.x);
      if (cfg.grad.tau == 1.0) {
        cur = std::move(fz);
      } else {
        for (std::size_t p = 0; p < cur.parts.size(); ++p) {
          cur.parts[p] = add(scale(fz.parts[p], cfg.grad.tau),
                             scale(cur.parts[p], 1.0 - cfg.grad.tau));
        }
      }
    }
    return cur;
  };

  // supervised losses and their upstream state gradients
  double supervised_value = 0.0;
  std::vector<backward::Parts> upstreams(n);
  StateGroup output_state = states.back();
  for (std::size_t i = 0; i < n; ++i) {
    if (weights[i] == 0.0) {
      for (const Tensor& p : states[i].parts) {
        upstreams[i].push_back(Tensor::zeros(p.shape()));
      }
      continue;
    }
    const bool via_pg = cfg.grad.mode == backward::GradConfig::Mode::PG ||
                        i + 1 < n;
    StateGroup at = via_pg ? refine(states[i]) : states[i];
    if (i + 1 == n) output_state = at;

    Tape tape;
    PassGuard guard(slots, tape);
    std::vector<Tensor> z_leaves = attach_state(at, tape);
    StateGroup z_rec;
    z_rec.parts = z_leaves;
    Tensor loss_i = mse_loss(batch.y, model.decode(z_rec));
    supervised_value += weights[i] * loss_i.value();

    std::vector<Tensor> wrt;
    for (Tensor* s : slot_ptrs) wrt.push_back(*s);
    for (const Tensor& zl : z_leaves) wrt.push_back(zl);
    auto g = grad(loss_i, wrt);
    for (std::size_t s = 0; s < slots.size(); ++s) {
      accumulate(s, g[s], weights[i]);
    }
    for (std::size_t p = 0; p < z_leaves.size(); ++p) {
      Tensor up = g[slots.size() + p];
      upstreams[i].push_back(weights[i] == 1.0 ? up
                                               : scale(up, weights[i]));
    }
  }

  // equilibrium-path gradients via the configured backward
  backward::PartsFn parts_fn = [&](const backward::Parts& parts) {
    StateGroup g;
    g.parts = parts;
    return model.equilibrium(g, batch.x).parts;
  };
  std::vector<backward::Parts> state_parts;
  state_parts.reserve(n);
  for (const StateGroup& s : states) state_parts.push_back(s.parts);
  auto per_state =
      backward::backward_dispatch(parts_fn, state_parts, upstreams, slot_ptrs,
                                  cfg.grad);
  for (const auto& pg : per_state) {
    for (std::size_t s = 0; s < slots.size(); ++s) {
      accumulate(s, pg.grads[s], 1.0);
    }
  }

  // Jacobian regularization: plain JR on the best state and/or the
  // jac_on_states correction over the sampled sequence
  double jr_value = 0.0;
  std::vector<std::pair<std::size_t, double>> jr_requests;
  if (cfg.jac_reg_weight > 0.0) {
    jr_requests.push_back({n - 1, cfg.jac_reg_weight});
  }
  if (cfg.correction &&
      cfg.correction->variant ==
          reg::CorrectionConfig::Variant::jac_on_states) {
    for (std::size_t i = 0; i < n; ++i) {
      jr_requests.push_back({i, cfg.correction->gamma});
    }
  }
  if (!jr_requests.empty() && !options.rng) {
    throw std::invalid_argument(
        "train_step: Jacobian regularization needs a probe rng");
  }
  for (auto [i, jw] : jr_requests) {
    Tape tape;
    PassGuard guard(slots, tape);
    std::vector<Tensor> z_leaves = attach_state(states[i], tape);
    StateGroup z_rec;
    z_rec.parts = z_leaves;
    auto f_parts = model.equilibrium(z_rec, batch.x).parts;
    Tensor jr =
        scale(group_jac_reg(f_parts, z_leaves, cfg.n_probes, *options.rng), jw);
    jr_value += jr.value();
    if (jr.recorded()) {
      std::vector<Tensor> wrt;
      for (Tensor* s : slot_ptrs) wrt.push_back(*s);
      auto g = grad(jr, wrt);
      for (std::size_t s = 0; s < slots.size(); ++s) accumulate(s, g[s], 1.0);
    }
  }

  const double loss_value = supervised_value + jr_value;
  if (!std::isfinite(loss_value)) {
    throw NonFiniteError("train_step: non-finite loss (residual=" +
                         std::to_string(info.residual) + ", steps=" +
                         std::to_string(info.steps) + ")");
  }

  auto trainables = norm::trainable_params(model);
  auto train_grads = norm::chain_grads(model, slots, slot_grads);
  opt.step(trainables, train_grads);

  StepMetrics m;
  m.loss = loss_value;
  m.residual = info.residual;
  m.steps = info.steps;
  m.converged = info.converged;
  m.states = std::move(states);
  m.output_state = std::move(output_state);
  return m;
}

}  // namespace eqsolve::deq
