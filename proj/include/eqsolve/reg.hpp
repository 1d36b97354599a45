#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "eqsolve/tensor.hpp"

namespace eqsolve::reg {

// Deterministic probe stream: same seed, same sequence.
class ProbeRng {
 public:
  explicit ProbeRng(std::uint64_t seed) : seed_(seed), eng_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  double gaussian();                       // Box-Muller over mt19937_64
  double uniform();                        // [0, 1)
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);  // inclusive
  Tensor gaussian_tensor(Shape shape);
  Tensor rademacher_tensor(Shape shape);

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

enum class ProbeKind { gaussian, rademacher, basis };

// Hutchinson estimate of tr(J^T J) = ||J_f||_F^2 at z: mean of ||J^T eps||^2
// over n_probes draws (basis probing sums over all unit vectors and is
// exact). The result stays on the tape of f_z, so it is differentiable
// w.r.t. anything f_z depends on.
Tensor jac_reg(const Tensor& f_z, const Tensor& z, int n_probes,
               ProbeRng& rng, ProbeKind kind = ProbeKind::gaussian);

struct CorrectionConfig {
  enum class Variant { supervise_states, jac_on_states };
  Variant variant = Variant::supervise_states;
  double gamma = 1.0;  // in (0, 1]
  std::vector<int> indexing;
  int n_states = 1;
  void validate() const;
};

using DecodeFn = std::function<Tensor(const Tensor&)>;
using LossFn = std::function<Tensor(const Tensor& target, const Tensor& pred)>;
using MapFn = std::function<Tensor(const Tensor&)>;

struct CorrectionResult {
  Tensor total;                      // scalar
  std::vector<Tensor> state_losses;  // per-state supervised losses
  std::vector<double> weights;       // gamma^{n-i}; final state weights 1
};

// Eq-style fixed-point correction: supervise_states weights decoded losses
// by gamma^{n-i}; jac_on_states adds gamma * sum_i JR(z_i) to the final
// loss. `f` is required only for the jac_on_states variant; fresh probes
// are drawn per state.
CorrectionResult correction_loss(const std::vector<Tensor>& states,
                                 const DecodeFn& decode, const LossFn& loss_fn,
                                 const Tensor& y, const CorrectionConfig& cfg,
                                 const MapFn& f = nullptr,
                                 ProbeRng* rng = nullptr, int n_probes = 1);

// First ceil(B/2) batch slices zero, the rest standard Gaussian.
Tensor mixed_init(const Shape& shape, ProbeRng& rng);

// Uniform integer in [lo, hi], the per-step randomized f_max_iter.
int random_max_iter(int lo, int hi, ProbeRng& rng);

}  // namespace eqsolve::reg
