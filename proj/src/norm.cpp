#include "eqsolve/norm.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <stdexcept>

namespace eqsolve::norm {

namespace {

constexpr double kRowEps2 = 1e-24;  // guard added under the row-norm sqrt
constexpr double kSigmaEps = 1e-12;

bool filtered(const std::string& name,
              const std::vector<std::string>& patterns) {
  for (const std::string& p : patterns) {
    if (!p.empty() && name.find(p) != std::string::npos) return true;
  }
  return false;
}

// Deterministic unit-norm start vector for the power iteration.
Eigen::VectorXd seeded_unit(Eigen::Index n, std::uint64_t salt) {
  std::uint64_t s = 0x9E3779B97F4A7C15ull ^ (salt * 0xBF58476D1CE4E5B9ull);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    s += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = s;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    z ^= z >> 31;
    v[i] = static_cast<double>(z >> 11) / 9007199254740992.0 - 0.5;
  }
  double nrm = v.norm();
  if (nrm == 0.0) v[0] = nrm = 1.0;
  return v / nrm;
}

Eigen::VectorXd row_norms(const Tensor& w) {
  const std::size_t r = w.rows(), c = w.cols();
  Eigen::VectorXd out(r);
  for (std::size_t i = 0; i < r; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < c; ++j) ss += w[i * c + j] * w[i * c + j];
    if (ss < kRowEps2) {
      spdlog::warn("norm: zero weight row {} clamped", i);
    }
    out[static_cast<Eigen::Index>(i)] = std::sqrt(ss + kRowEps2);
  }
  return out;
}

void power_iterate(const Tensor& w, NormState& st, int n_power) {
  auto wm = w.mat();
  if (st.u.size() != wm.rows()) {
    st.u = seeded_unit(wm.rows(), static_cast<std::uint64_t>(w.size()));
  }
  Eigen::VectorXd u = st.u, v;
  for (int it = 0; it < n_power; ++it) {
    v = wm.transpose() * u;
    double vn = v.norm();
    if (vn < kSigmaEps) {
      spdlog::warn("norm: zero matrix signaled in power iteration");
      v.setZero();
      v[0] = 1.0;
    } else {
      v /= vn;
    }
    u = wm * v;
    double un = u.norm();
    if (un < kSigmaEps) {
      u.setZero();
      u[0] = 1.0;
    } else {
      u /= un;
    }
  }
  st.u = u;
  st.v = v;
}

double sigma_from_current(const NormState& st) {
  return std::max(st.u.dot(st.raw.mat() * st.v), kSigmaEps);
}

double clipped(double factor, const std::optional<double>& t) {
  return t ? std::min(*t, factor) : factor;
}

// Writes the cached effective weight from (raw, g) and the current
// power-iteration estimate; one normalization computation.
void write_cache(NormState& st, std::uint64_t& counter) {
  const std::size_t r = st.raw.rows(), c = st.raw.cols();
  std::vector<double> eff(st.raw.size());
  if (st.kind == NormKind::weight_norm) {
    Eigen::VectorXd factors = st.g.vec().cwiseQuotient(row_norms(st.raw));
    for (std::size_t i = 0; i < r; ++i) {
      const double f = clipped(factors[static_cast<Eigen::Index>(i)], st.clip_t);
      for (std::size_t j = 0; j < c; ++j) eff[i * c + j] = st.raw[i * c + j] * f;
    }
  } else {
    const double f = clipped(st.g.value() / sigma_from_current(st), st.clip_t);
    for (std::size_t i = 0; i < st.raw.size(); ++i) eff[i] = st.raw[i] * f;
  }
  *st.slot = Tensor({r, c}, std::move(eff), st.raw.dtype());
  ++counter;
}

// Effective weight as a tape expression of (raw, g); the power-iteration
// pair is held constant, as in standard spectral-norm backprop.
Tensor effective_on_tape(const NormState& st, const Tensor& raw,
                         const Tensor& g) {
  if (st.kind == NormKind::weight_norm) {
    const std::size_t r = st.raw.rows();
    Tensor ns =
        sqrt(add(row_sum(mul(raw, raw)), Tensor::full({r, 1}, kRowEps2)));
    Tensor factor = div(g, ns);
    if (st.clip_t) factor = clip_max(factor, *st.clip_t);
    return row_scale(raw, factor);
  }
  Tensor v_const = Tensor::from_vec(st.v).with_shape({st.raw.cols(), 1});
  Tensor u_const = Tensor::from_vec(st.u).with_shape({st.raw.rows(), 1});
  Tensor sigma = sum(mul(u_const, matmul(raw, v_const)));
  Tensor factor = div(g, sigma);
  if (st.clip_t) factor = clip_max(factor, *st.clip_t);
  return mul(raw, factor);
}

NormState* state_for(NormSet* set, const Tensor* slot) {
  if (!set) return nullptr;
  for (NormState& s : set->states) {
    if (s.slot == slot) return &s;
  }
  return nullptr;
}

}  // namespace

NormKind norm_kind_from_string(const std::string& name) {
  if (name == "none") return NormKind::none;
  if (name == "weight_norm") return NormKind::weight_norm;
  if (name == "spectral_norm") return NormKind::spectral_norm;
  throw std::invalid_argument("unknown norm type: " + name);
}

std::string to_string(NormKind kind) {
  switch (kind) {
    case NormKind::none: return "none";
    case NormKind::weight_norm: return "weight_norm";
    case NormKind::spectral_norm: return "spectral_norm";
  }
  return "?";
}

Eigen::VectorXd weight_norm_factor(const Tensor& w, const Eigen::VectorXd& g) {
  if (static_cast<std::size_t>(g.size()) != w.rows()) {
    throw std::invalid_argument("weight_norm_factor: g size mismatch");
  }
  return g.cwiseQuotient(row_norms(w));
}

double spectral_norm_factor(const Tensor& w, NormState& state, int n_power) {
  if (n_power < 1) {
    throw std::invalid_argument("spectral_norm_factor: n_power must be >= 1");
  }
  power_iterate(w, state, n_power);
  double sigma = std::max(state.u.dot(w.mat() * state.v), kSigmaEps);
  return state.g.size() == 1 ? state.g.value() / sigma : 1.0 / sigma;
}

void apply_norm(Module& m, const NormOptions& opts) {
  if (opts.kind == NormKind::none) return;
  if (m.norm_set()) {
    throw std::logic_error("apply_norm: normalization already applied");
  }
  auto set = std::make_shared<NormSet>();
  set->n_power = opts.n_power;
  std::uint64_t index = 0;
  for (ParamRef& ref : m.param_refs()) {
    ++index;
    if (!ref.weight_matrix || filtered(ref.name, opts.filter_out)) continue;
    if (ref.tensor->shape().size() != 2) continue;

    NormState st;
    st.name = ref.name;
    st.kind = opts.kind;
    st.slot = ref.tensor;
    st.raw = ref.tensor->detached();
    st.no_scale = opts.no_scale;
    st.clip_t = opts.clip_t;

    const std::size_t r = st.raw.rows();
    if (opts.kind == NormKind::weight_norm) {
      if (opts.no_scale) {
        st.g = Tensor::full({r, 1}, 1.0);
      } else {
        // g starts at the current row norms, so the initial factor is
        // exactly 1 and decoration preserves outputs
        Eigen::VectorXd norms = row_norms(st.raw);
        st.g = Tensor::from_vec(norms).with_shape({r, 1});
      }
    } else {
      st.u = seeded_unit(static_cast<Eigen::Index>(r), index);
      power_iterate(st.raw, st, opts.n_power);
      st.g = opts.no_scale ? Tensor::scalar(1.0)
                           : Tensor::scalar(sigma_from_current(st));
    }
    write_cache(st, set->compute_count);
    set->states.push_back(std::move(st));
  }
  m.norm_set() = set;
}

void reset_norm(Module& m) {
  auto& set = m.norm_set();
  if (!set) return;
  for (NormState& st : set->states) {
    if (st.kind == NormKind::spectral_norm) {
      power_iterate(st.raw, st, set->n_power);
    }
    write_cache(st, set->compute_count);
  }
}

void remove_norm(Module& m) {
  // the slots already hold the effective weights the forward pass uses
  m.norm_set().reset();
}

std::uint64_t norm_compute_count(Module& m) {
  return m.norm_set() ? m.norm_set()->compute_count : 0;
}

std::vector<ParamRef> trainable_params(Module& m) {
  std::vector<ParamRef> out;
  NormSet* set = m.norm_set().get();
  for (ParamRef& ref : m.param_refs()) {
    NormState* st = state_for(set, ref.tensor);
    if (!st) {
      out.push_back(ref);
      continue;
    }
    out.push_back({ref.name + ".raw", &st->raw, true});
    if (!st->no_scale) out.push_back({ref.name + ".g", &st->g, false});
  }
  return out;
}

std::vector<Tensor> chain_grads(Module& m, const std::vector<ParamRef>& slots,
                                const std::vector<Tensor>& slot_grads) {
  if (slots.size() != slot_grads.size()) {
    throw std::invalid_argument("chain_grads: size mismatch");
  }
  NormSet* set = m.norm_set().get();
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    NormState* st = state_for(set, slots[i].tensor);
    if (!st) {
      out.push_back(slot_grads[i]);
      continue;
    }
    Tape tape;
    Tensor raw = st->raw.detached();
    raw.attach_leaf(tape);
    Tensor g = st->g.detached();
    if (!st->no_scale) g.attach_leaf(tape);
    Tensor eff = effective_on_tape(*st, raw, g);
    const Tensor outs[] = {eff};
    const Tensor seeds[] = {slot_grads[i].with_shape(eff.shape())};
    if (st->no_scale) {
      const Tensor wrt[] = {raw};
      out.push_back(backward_from(outs, seeds, wrt)[0]);
    } else {
      const Tensor wrt[] = {raw, g};
      auto gs = backward_from(outs, seeds, wrt);
      out.push_back(gs[0]);
      out.push_back(gs[1]);
    }
  }
  return out;
}

}  // namespace eqsolve::norm
