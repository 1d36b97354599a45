#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eqsolve/module.hpp"
#include "eqsolve/tensor.hpp"

namespace eqsolve::norm {

enum class NormKind { none, weight_norm, spectral_norm };

NormKind norm_kind_from_string(const std::string& name);
std::string to_string(NormKind kind);

struct NormOptions {
  NormKind kind = NormKind::none;
  std::optional<double> clip_t;  // rescaling-factor clip threshold
  bool no_scale = false;         // freeze g at 1
  std::vector<std::string> filter_out;  // substring patterns on slot names
  int n_power = 1;               // power iterations per reset
};

// Reparameterization state for one weight slot. The slot itself holds the
// cached effective weight W ∘ min(t, g/N(W)); forward passes read it until
// the next reset.
struct NormState {
  std::string name;
  NormKind kind = NormKind::none;
  Tensor* slot = nullptr;
  Tensor raw;  // trainable weight
  Tensor g;    // learnable scale: per-row for WN, scalar for SN
  bool no_scale = false;
  std::optional<double> clip_t;
  Eigen::VectorXd u, v;  // persistent power-iteration pair (SN)
};

class NormSet {
 public:
  std::vector<NormState> states;
  int n_power = 1;
  std::uint64_t compute_count = 0;  // per-weight normalization computations
};

// f_i = g_i / ||W_i:||, with a 1e-12 guard against zero rows (signaled).
Eigen::VectorXd weight_norm_factor(const Tensor& w, const Eigen::VectorXd& g);

// Runs n_power power iterations on the persistent (u, v) pair and returns
// g / sigma_hat. Zero matrices are signaled and guarded.
double spectral_norm_factor(const Tensor& w, NormState& state, int n_power);

void apply_norm(Module& m, const NormOptions& opts);
void reset_norm(Module& m);
void remove_norm(Module& m);

std::uint64_t norm_compute_count(Module& m);

// Trainable parameters after decoration: raw weights and scales replace
// decorated slots; everything else passes through.
std::vector<ParamRef> trainable_params(Module& m);

// Maps gradients w.r.t. the module's slots (as returned by the backward
// module) to gradients w.r.t. trainable_params(m), chaining through the
// rescaling factor for decorated weights.
std::vector<Tensor> chain_grads(Module& m, const std::vector<ParamRef>& slots,
                                const std::vector<Tensor>& slot_grads);

}  // namespace eqsolve::norm
