#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "eqsolve/deq.hpp"

namespace eqsolve::zoo {

// ----------------------------------------------------------------- SIREN

// Implicit-representation equilibrium layer z = Sin(W z + u(x) + b) over a
// batch of coordinates; u(x) applies the frequency scale omega to the
// injection only.
class SirenDeq : public deq::DeqModel {
 public:
  SirenDeq(std::size_t hidden, std::size_t in_dim, std::size_t out_dim,
           std::uint64_t seed, double spectral_target = 0.9,
           double omega = 30.0);

  std::vector<ParamRef> param_refs() override;
  deq::StateGroup equilibrium(const deq::StateGroup& z,
                              const Tensor& x) override;
  Tensor decode(const deq::StateGroup& z) override;
  deq::StateGroup initial_state(const Tensor& x) override;

  Tensor w, w_u, b, w_d, b_d;
  double omega;
  std::size_t hidden;
};

Tensor coord_grid(std::size_t h, std::size_t w);  // [h*w, 2] in [-1,1]^2
// The standard 32x32 synthetic target: a fixed sum of sinusoids in [0,1].
Tensor sinusoid_image(std::size_t h, std::size_t w);
double psnr_db(const Tensor& target, const Tensor& pred);

struct FitResult {
  std::vector<double> psnr_trace;
  std::vector<double> loss_trace;
  double final_psnr = 0.0;
  bool diverged = false;
  int steps_run = 0;
};

// Trains the model on image pixels via train_step; PSNR is evaluated every
// eval_every steps and at the end. Divergence is reported, not thrown.
FitResult fit_image(SirenDeq& model, const Tensor& image,
                    const deq::DeqConfig& cfg, optim::Optimizer& opt,
                    int steps, int eval_every = 100,
                    reg::ProbeRng* rng = nullptr);

// ------------------------------------------------------------------ IGNN

struct ToyGraph {
  Eigen::MatrixXd adjacency_norm;  // D^{-1/2} (A + I) D^{-1/2}
  Tensor features;                 // [n, feat_dim]
  Tensor labels_onehot;            // [n, 2]
  std::vector<int> labels;
};

ToyGraph two_community_graph(int n, std::uint64_t seed, double p_in = 0.2,
                             double p_out = 0.02, std::size_t feat_dim = 8,
                             double signal = 0.8);

// Z = relu(A Z W^T + X Wu^T); decode Z Wd^T to community logits.
class ToyIgnn : public deq::DeqModel {
 public:
  ToyIgnn(const ToyGraph& graph, std::size_t hidden, std::uint64_t seed,
          double weight_scale = 0.5);

  std::vector<ParamRef> param_refs() override;
  deq::StateGroup equilibrium(const deq::StateGroup& z,
                              const Tensor& x) override;
  Tensor decode(const deq::StateGroup& z) override;
  deq::StateGroup initial_state(const Tensor& x) override;

  Tensor a_norm;  // constant normalized adjacency
  Tensor w, w_u, w_d;
  std::size_t nodes, hidden;
};

double accuracy(const Tensor& logits, const std::vector<int>& labels);

// ------------------------------------------------------------- DEQ-DDIM

// Sampling chain z_{t-1} = a_t z_t + b_t eps(z_t, t) + c_t x_t, stacked as
// Z = A Z_T + R (B eps(Z) + C X); row i holds z_{i-1}.
struct DiffusionChain {
  int T = 0;
  int dim = 0;
  Eigen::VectorXd a, b, c;               // index t-1 holds the step-t constant
  Eigen::MatrixXd A, R, B, C;            // T x T scalar chain matrices
  std::vector<Eigen::VectorXd> x_noise;  // x_1 .. x_T
  Eigen::VectorXd z_T;
};

using Denoiser =
    std::function<Eigen::VectorXd(const Eigen::VectorXd& z, int t)>;

// Chain matrices from the per-step constants:
// A_{i,i} = prod_{j>=i} a_j, R_{i,k} = prod_{i<=j<k} a_j (R_{i,i}=1),
// B_{k,k} = b_k, C_{k,k} = c_k.
void ddim_matrices(int T, const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                   const Eigen::VectorXd& c, Eigen::MatrixXd& A,
                   Eigen::MatrixXd& R, Eigen::MatrixXd& Bm,
                   Eigen::MatrixXd& Cm);

// Seeded synthetic schedule: a_t in (0.9, 1.0), b_t, c_t in (0, 0.1);
// deterministic mode zeroes c (noise-free chain).
DiffusionChain make_toy_chain(int T, int dim, std::uint64_t seed,
                              bool deterministic = true);
// Affine toy denoiser eps(z, t) = M_t z + m_t with controlled norm.
Denoiser make_toy_denoiser(int T, int dim, std::uint64_t seed);

// The stacked operator applied to a flattened trajectory (T*dim vector).
Eigen::VectorXd ddim_stacked_apply(const DiffusionChain& chain,
                                   const Denoiser& eps,
                                   const Eigen::VectorXd& traj);

// T sequential steps from z_T down to z_0; returns [z_0 .. z_{T-1}].
std::vector<Eigen::VectorXd> ddim_sequential(const DiffusionChain& chain,
                                             const Denoiser& eps);

struct ParallelResult {
  std::vector<Eigen::VectorXd> trajectory;
  solvers::SolverResult solver;
};

// Solves the stacked system with the configured solver from the stacked
// z_T initialization; equals the sequential trajectory at equilibrium.
ParallelResult ddim_parallel(const DiffusionChain& chain, const Denoiser& eps,
                             const solvers::SolverConfig& cfg);

// ------------------------------------------------- benchmark toy models

// f(z, x) = tanh(W z + U x + b) with ||W||_2 pinned at construction.
class ContractiveTanhDeq : public deq::DeqModel {
 public:
  ContractiveTanhDeq(std::size_t dim, std::uint64_t seed,
                     double contraction = 0.6);

  std::vector<ParamRef> param_refs() override;
  deq::StateGroup equilibrium(const deq::StateGroup& z,
                              const Tensor& x) override;
  Tensor decode(const deq::StateGroup& z) override;
  deq::StateGroup initial_state(const Tensor& x) override;

  Tensor w, u, b, d;
  std::size_t dim;
};

}  // namespace eqsolve::zoo
