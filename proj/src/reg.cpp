#include "eqsolve/reg.hpp"

#include <cmath>
#include <stdexcept>

namespace eqsolve::reg {

double ProbeRng::uniform() {
  ++counter_;
  // 53-bit mantissa in [0, 1)
  return static_cast<double>(eng_() >> 11) / 9007199254740992.0;
}

double ProbeRng::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  double u2 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::int64_t ProbeRng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (lo > hi) throw std::invalid_argument("uniform_int: lo > hi");
  ++counter_;
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<std::int64_t>(eng_() % span);
}

Tensor ProbeRng::gaussian_tensor(Shape shape) {
  std::vector<double> data(numel(shape));
  for (double& x : data) x = gaussian();
  return Tensor(std::move(shape), std::move(data));
}

Tensor ProbeRng::rademacher_tensor(Shape shape) {
  std::vector<double> data(numel(shape));
  for (double& x : data) x = uniform() < 0.5 ? -1.0 : 1.0;
  return Tensor(std::move(shape), std::move(data));
}

Tensor jac_reg(const Tensor& f_z, const Tensor& z, int n_probes, ProbeRng& rng,
               ProbeKind kind) {
  if (kind != ProbeKind::basis && n_probes < 1) {
    throw std::invalid_argument("jac_reg: n_probes must be >= 1");
  }
  if (!z.recorded()) {
    throw std::invalid_argument("jac_reg: z is not recorded on a tape");
  }
  if (!f_z.recorded()) return Tensor::scalar(0.0);  // constant f: J = 0

  const Tensor outs[] = {f_z};
  const Tensor wrt[] = {z};
  auto probe_term = [&](const Tensor& eps) {
    const Tensor seeds[] = {eps};
    Tensor jt_eps = backward_from(outs, seeds, wrt, /*create_graph=*/true)[0];
    return sum(mul(jt_eps, jt_eps));
  };

  if (kind == ProbeKind::basis) {
    Tensor total = Tensor::scalar(0.0);
    for (std::size_t i = 0; i < f_z.size(); ++i) {
      std::vector<double> e(f_z.size(), 0.0);
      e[i] = 1.0;
      total = add(total, probe_term(Tensor(f_z.shape(), std::move(e))));
    }
    return total;  // exact trace, no 1/n scaling
  }

  Tensor total = Tensor::scalar(0.0);
  for (int p = 0; p < n_probes; ++p) {
    Tensor eps = kind == ProbeKind::gaussian
                     ? rng.gaussian_tensor(f_z.shape())
                     : rng.rademacher_tensor(f_z.shape());
    total = add(total, probe_term(eps));
  }
  return scale(total, 1.0 / n_probes);
}

void CorrectionConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw std::invalid_argument("CorrectionConfig: gamma must be in (0,1]");
  }
  if (indexing.empty() && n_states < 1) {
    throw std::invalid_argument("CorrectionConfig: n_states must be >= 1");
  }
}

CorrectionResult correction_loss(const std::vector<Tensor>& states,
                                 const DecodeFn& decode, const LossFn& loss_fn,
                                 const Tensor& y, const CorrectionConfig& cfg,
                                 const MapFn& f, ProbeRng* rng, int n_probes) {
  cfg.validate();
  if (states.empty()) {
    throw std::invalid_argument("correction_loss: states must be non-empty");
  }
  const std::size_t n = states.size();
  CorrectionResult out;
  out.weights.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.weights[i] = std::pow(cfg.gamma, static_cast<double>(n - 1 - i));
  }

  if (cfg.variant == CorrectionConfig::Variant::supervise_states) {
    Tensor total = Tensor::scalar(0.0);
    for (std::size_t i = 0; i < n; ++i) {
      Tensor li = loss_fn(y, decode(states[i]));
      out.state_losses.push_back(li);
      total = add(total, scale(li, out.weights[i]));
    }
    out.total = total;
    return out;
  }

  // jac_on_states: final supervised loss plus gamma * sum_i JR(z_i)
  if (!f || !rng) {
    throw std::invalid_argument(
        "correction_loss: jac_on_states needs f and a probe rng");
  }
  Tensor final_loss = loss_fn(y, decode(states.back()));
  out.state_losses.push_back(final_loss);
  Tensor jr_total = Tensor::scalar(0.0);
  for (std::size_t i = 0; i < n; ++i) {
    // fresh probes per state
    Tape tape;
    Tensor zi = states[i].detached();
    zi.attach_leaf(tape);
    Tensor f_zi = f(zi);
    jr_total = add(jr_total, jac_reg(f_zi, zi, n_probes, *rng).detached());
  }
  out.total = add(final_loss, scale(jr_total, cfg.gamma));
  return out;
}

Tensor mixed_init(const Shape& shape, ProbeRng& rng) {
  if (shape.empty() || shape[0] < 1) {
    throw std::invalid_argument("mixed_init: leading batch dim required");
  }
  const std::size_t batch = shape[0];
  const std::size_t slice = numel(shape) / batch;
  const std::size_t zero_rows = (batch + 1) / 2;  // ceil(B/2)
  std::vector<double> data(numel(shape), 0.0);
  for (std::size_t b = zero_rows; b < batch; ++b) {
    for (std::size_t j = 0; j < slice; ++j) {
      data[b * slice + j] = rng.gaussian();
    }
  }
  return Tensor(shape, std::move(data));
}

int random_max_iter(int lo, int hi, ProbeRng& rng) {
  if (lo < 1 || lo > hi) {
    throw std::invalid_argument("random_max_iter: need 1 <= lo <= hi");
  }
  return static_cast<int>(rng.uniform_int(lo, hi));
}

}  // namespace eqsolve::reg
