#include "eqsolve/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>

namespace eqsolve::solvers {

namespace {

constexpr double kResidualEps = 1e-8;

// Collects iterates at requested 1-based evaluation indices.
class StateSampler {
 public:
  explicit StateSampler(std::vector<int> indices) {
    for (int i : indices) wanted_[i];
  }
  void offer(int step, const Vec& z) {
    auto it = wanted_.find(step);
    if (it != wanted_.end()) it->second = z;
  }
  // Unreached indices duplicate the final (best) iterate.
  Vec at(int index, const Vec& z_best) const {
    auto it = wanted_.find(index);
    if (it == wanted_.end() || it->second.size() == 0) return z_best;
    return it->second;
  }

 private:
  std::map<int, Vec> wanted_;
};

Vec eval_f(const StateFn& f, const Vec& z) {
  Vec fz;
  try {
    fz = f(z);
  } catch (const NonFiniteError& e) {
    throw NonFiniteError(std::string("solver: ") + e.what(), z);
  }
  if (fz.size() != z.size()) {
    throw std::invalid_argument("solver: f changed the state dimension");
  }
  if (!fz.allFinite()) {
    throw NonFiniteError("solver: f produced a non-finite state", z);
  }
  return fz;
}

struct Trace {
  std::vector<double> residuals;
  double best = std::numeric_limits<double>::infinity();
  Vec z_best;

  // Returns true when `r` hits a new low.
  bool record(double r, const Vec& z) {
    residuals.push_back(r);
    if (r < best) {
      best = r;
      z_best = z;
      return true;
    }
    return false;
  }
};

SolverResult finish(Trace&& trace, const Vec& z0, double tol,
                    std::vector<SolverEvent> events = {}) {
  SolverResult res;
  res.residuals = std::move(trace.residuals);
  res.steps = static_cast<int>(res.residuals.size());
  res.z_best = trace.z_best.size() ? trace.z_best : z0;
  res.converged = !res.residuals.empty() && trace.best <= tol;
  res.events = std::move(events);
  return res;
}

}  // namespace

SolverKind solver_kind_from_string(const std::string& name) {
  if (name == "fixed_point_iter") return SolverKind::fixed_point_iter;
  if (name == "anderson") return SolverKind::anderson;
  if (name == "broyden") return SolverKind::broyden;
  throw std::invalid_argument("unknown solver: " + name);
}

std::string to_string(SolverKind kind) {
  switch (kind) {
    case SolverKind::fixed_point_iter: return "fixed_point_iter";
    case SolverKind::anderson: return "anderson";
    case SolverKind::broyden: return "broyden";
  }
  return "?";
}

void SolverConfig::validate() const {
  if (max_iter < 0) throw std::invalid_argument("SolverConfig: max_iter < 0");
  if (!(tol > 0)) throw std::invalid_argument("SolverConfig: tol must be > 0");
  if (m < 1) throw std::invalid_argument("SolverConfig: m must be >= 1");
  if (!(tau > 0.0 && tau <= 1.0)) {
    throw std::invalid_argument("SolverConfig: tau must be in (0,1]");
  }
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("SolverConfig: alpha must be in (0,1]");
  }
  if (lam < 0) throw std::invalid_argument("SolverConfig: lam < 0");
}

double rel_residual(const Vec& f_z, const Vec& z) {
  if (f_z.size() != z.size()) {
    throw std::invalid_argument("rel_residual: size mismatch");
  }
  if (!f_z.allFinite() || !z.allFinite()) {
    throw NonFiniteError("rel_residual: non-finite input");
  }
  return (f_z - z).norm() / (z.norm() + kResidualEps);
}

namespace detail {

SolverResult run_fixed_point(const StateFn& f, const Vec& z0,
                             const SolverConfig& cfg, StateSampler* sampler) {
  cfg.validate();
  Trace trace;
  Vec z = z0;
  for (int k = 1; k <= cfg.max_iter; ++k) {
    Vec fz = eval_f(f, z);
    double r = rel_residual(fz, z);
    trace.record(r, z);
    if (r <= cfg.tol) break;
    z = std::move(fz);
    if (sampler) sampler->offer(k, z);
  }
  return finish(std::move(trace), z0, cfg.tol);
}

// Anderson acceleration over the past m+1 estimates. The constrained
// least squares min ||G a|| s.t. 1^T a = 1 is solved by eliminating the
// newest coefficient and solving Tikhonov-regularized normal equations;
// lam scales with trace(D^T D) so the solve is invariant to residual scale.
SolverResult run_anderson(const StateFn& f, const Vec& z0,
                          const SolverConfig& cfg, StateSampler* sampler) {
  cfg.validate();
  Trace trace;
  std::vector<SolverEvent> events;
  std::deque<Vec> zs, fs;
  const std::size_t window = static_cast<std::size_t>(cfg.m) + 1;
  Vec z = z0;
  for (int k = 1; k <= cfg.max_iter; ++k) {
    Vec fz = eval_f(f, z);
    double r = rel_residual(fz, z);
    trace.record(r, z);
    if (r <= cfg.tol) break;

    zs.push_back(z);
    fs.push_back(fz);
    if (zs.size() > window) {
      zs.pop_front();
      fs.pop_front();
    }

    Vec z_next;
    const std::size_t w = zs.size();
    if (w == 1) {
      z_next = cfg.tau * fz + (1.0 - cfg.tau) * z;
    } else {
      const std::size_t p = w - 1;
      Vec g_new = fs.back() - zs.back();
      Eigen::MatrixXd D(z.size(), p);
      for (std::size_t i = 0; i < p; ++i) {
        D.col(i) = (fs[i] - zs[i]) - g_new;
      }
      Eigen::MatrixXd gram = D.transpose() * D;
      double reg = cfg.lam * std::max(gram.trace() / static_cast<double>(p),
                                      std::numeric_limits<double>::min());
      gram.diagonal().array() += reg;
      Vec beta = gram.ldlt().solve(-D.transpose() * g_new);
      if (!beta.allFinite()) {
        events.push_back({k, SolverEvent::Kind::anderson_ls_fallback});
        z_next = cfg.tau * fz + (1.0 - cfg.tau) * z;
      } else {
        Vec alpha(w);
        alpha.head(p) = beta;
        alpha[p] = 1.0 - beta.sum();
        Vec mix_f = Vec::Zero(z.size());
        Vec mix_z = Vec::Zero(z.size());
        for (std::size_t i = 0; i < w; ++i) {
          mix_f += alpha[i] * fs[i];
          mix_z += alpha[i] * zs[i];
        }
        z_next = cfg.tau * mix_f + (1.0 - cfg.tau) * mix_z;
      }
    }
    z = std::move(z_next);
    if (sampler) sampler->offer(k, z);
  }
  return finish(std::move(trace), z0, cfg.tol, std::move(events));
}

// Broyden's method on g(z) = f(z) - z with the inverse-Jacobian estimate
// kept in low-rank form B = B0 + U V^T (B0 = -I, so the first step is a
// plain fixed-point step at alpha=1). Each secant update appends one
// (u, v) column pair; the oldest pair is evicted past the m budget.
class LowRankBroyden {
 public:
  LowRankBroyden(Eigen::Index n, int m) : u_(n, m), v_(n, m) {}

  Vec apply(const Vec& q) const {  // B q
    Vec out = -q;
    for (int j = 0; j < count_; ++j) {
      const int c = col(j);
      out += u_.col(c) * v_.col(c).dot(q);
    }
    return out;
  }

  Vec apply_T(const Vec& q) const {  // B^T q
    Vec out = -q;
    for (int j = 0; j < count_; ++j) {
      const int c = col(j);
      out += v_.col(c) * u_.col(c).dot(q);
    }
    return out;
  }

  // Secant update from (dz, dg); returns false when the denominator
  // dz^T B dg degenerates and the update is skipped.
  bool update(const Vec& dz, const Vec& dg) {
    Vec b_dg = apply(dg);
    double denom = dz.dot(b_dg);
    double scale = dz.norm() * b_dg.norm();
    if (!std::isfinite(denom) || std::abs(denom) < 1e-14 * std::max(scale, 1e-300)) {
      return false;
    }
    Vec u_new = (dz - b_dg) / denom;
    Vec v_new = apply_T(dz);
    const int c = next_col();
    u_.col(c) = u_new;
    v_.col(c) = v_new;
    return true;
  }

  int count() const { return count_; }

 private:
  int col(int j) const { return (start_ + j) % static_cast<int>(u_.cols()); }
  int next_col() {
    const int cap = static_cast<int>(u_.cols());
    if (count_ < cap) return col(count_++);
    const int c = start_;
    start_ = (start_ + 1) % cap;
    return c;
  }

  Eigen::MatrixXd u_, v_;
  int count_ = 0;
  int start_ = 0;
};

SolverResult run_broyden(const StateFn& f, const Vec& z0,
                         const SolverConfig& cfg, StateSampler* sampler) {
  cfg.validate();
  Trace trace;
  std::vector<SolverEvent> events;
  LowRankBroyden B(z0.size(), cfg.m);
  Vec z = z0;
  Vec g_prev;
  Vec z_prev;
  for (int k = 1; k <= cfg.max_iter; ++k) {
    Vec fz = eval_f(f, z);
    double r = rel_residual(fz, z);
    trace.record(r, z);
    if (r <= cfg.tol) break;

    Vec g = fz - z;
    if (k > 1) {
      Vec dz = z - z_prev;
      Vec dg = g - g_prev;
      if (!B.update(dz, dg)) {
        events.push_back({k, SolverEvent::Kind::broyden_update_skipped});
      }
    }
    z_prev = z;
    g_prev = g;
    z = z - cfg.alpha * B.apply(g);
    if (sampler) sampler->offer(k, z);
  }
  return finish(std::move(trace), z0, cfg.tol, std::move(events));
}

SolverResult dispatch(const StateFn& f, const Vec& z0, const SolverConfig& cfg,
                      StateSampler* sampler) {
  switch (cfg.kind) {
    case SolverKind::fixed_point_iter: return run_fixed_point(f, z0, cfg, sampler);
    case SolverKind::anderson: return run_anderson(f, z0, cfg, sampler);
    case SolverKind::broyden: return run_broyden(f, z0, cfg, sampler);
  }
  throw std::logic_error("solve: unknown solver kind");
}

}  // namespace detail

SolverResult fixed_point_iter(const StateFn& f, const Vec& z0,
                              const SolverConfig& cfg) {
  return detail::run_fixed_point(f, z0, cfg, nullptr);
}

SolverResult anderson(const StateFn& f, const Vec& z0, const SolverConfig& cfg) {
  return detail::run_anderson(f, z0, cfg, nullptr);
}

SolverResult broyden(const StateFn& f, const Vec& z0, const SolverConfig& cfg) {
  return detail::run_broyden(f, z0, cfg, nullptr);
}

SolverResult solve(const StateFn& f, const Vec& z0, const SolverConfig& cfg,
                   const SampleSpec& spec) {
  cfg.validate();
  std::vector<int> indices;
  bool explicit_indexing = !spec.indexing.empty();
  if (explicit_indexing) {
    indices = spec.indexing;
    std::sort(indices.begin(), indices.end());
    for (int i : indices) {
      if (i < 1 || i >= cfg.max_iter) {
        throw std::invalid_argument(
            "solve: indexing entries must satisfy 1 <= i < max_iter");
      }
    }
  } else {
    const int k = std::max(spec.n_states, 1);
    for (int j = 1; j <= k; ++j) {
      indices.push_back(static_cast<int>(
          std::ceil(static_cast<double>(j) * cfg.max_iter / k)));
    }
  }

  StateSampler sampler(indices);
  SolverResult res = detail::dispatch(f, z0, cfg, &sampler);

  res.states.clear();
  for (int idx : indices) {
    if (!explicit_indexing && idx >= cfg.max_iter) {
      res.states.push_back(res.z_best);
    } else {
      res.states.push_back(sampler.at(idx, res.z_best));
    }
  }
  // the final (best) state always closes the list
  if (explicit_indexing) res.states.push_back(res.z_best);
  return res;
}

}  // namespace eqsolve::solvers
