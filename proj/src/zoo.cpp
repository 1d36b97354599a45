#include "eqsolve/zoo.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace eqsolve::zoo {

namespace {

Tensor mat_tensor(const Eigen::MatrixXd& m) {
  std::vector<double> d(m.size());
  Eigen::Map<RowMat>(d.data(), m.rows(), m.cols()) = m;
  return Tensor({static_cast<std::size_t>(m.rows()),
                 static_cast<std::size_t>(m.cols())},
                std::move(d));
}

Eigen::MatrixXd gaussian_matrix(std::size_t r, std::size_t c,
                                std::mt19937_64& rng, double scl) {
  std::normal_distribution<double> gauss;
  Eigen::MatrixXd m(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) m(i, j) = scl * gauss(rng);
  }
  return m;
}

Eigen::MatrixXd with_spectral_norm(std::size_t n, double target,
                                   std::mt19937_64& rng) {
  Eigen::MatrixXd m = gaussian_matrix(n, n, rng, 1.0);
  const double sigma = m.jacobiSvd().singularValues()(0);
  return m * (target / sigma);
}

// bias broadcast over the batch: ones[B,1] * b[1,d]
Tensor add_bias(const Tensor& zb, const Tensor& bias) {
  Tensor ones = Tensor::full({zb.rows(), 1}, 1.0);
  return add(zb, matmul(ones, bias));
}

}  // namespace

// ----------------------------------------------------------------- SIREN

SirenDeq::SirenDeq(std::size_t hidden_, std::size_t in_dim,
                   std::size_t out_dim, std::uint64_t seed,
                   double spectral_target, double omega_)
    : omega(omega_), hidden(hidden_) {
  std::mt19937_64 rng(seed);
  w = mat_tensor(with_spectral_norm(hidden, spectral_target, rng));
  // first-layer SIREN-style injection; omega is applied to the coordinates
  w_u = mat_tensor(gaussian_matrix(hidden, in_dim, rng, 1.0 / std::sqrt(2.0)));
  b = mat_tensor(gaussian_matrix(1, hidden, rng, 0.1));
  w_d = mat_tensor(
      gaussian_matrix(out_dim, hidden, rng, 1.0 / std::sqrt(double(hidden))));
  b_d = mat_tensor(Eigen::MatrixXd::Zero(1, out_dim));
}

std::vector<ParamRef> SirenDeq::param_refs() {
  return {{"siren.weight", &w, true},
          {"siren.inject", &w_u, true},
          {"siren.bias", &b, false},
          {"decode.weight", &w_d, true},
          {"decode.bias", &b_d, false}};
}

deq::StateGroup SirenDeq::equilibrium(const deq::StateGroup& z,
                                      const Tensor& x) {
  Tensor pre = add(matmul(z.primary(), transpose(w)),
                   matmul(scale(x, omega), transpose(w_u)));
  return deq::StateGroup(sin(add_bias(pre, b)));
}

Tensor SirenDeq::decode(const deq::StateGroup& z) {
  return add_bias(matmul(z.primary(), transpose(w_d)), b_d);
}

deq::StateGroup SirenDeq::initial_state(const Tensor& x) {
  return deq::StateGroup(Tensor::zeros({x.rows(), hidden}));
}

Tensor coord_grid(std::size_t h, std::size_t w) {
  std::vector<double> data(h * w * 2);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t i = r * w + c;
      data[2 * i] = h > 1 ? 2.0 * r / (h - 1) - 1.0 : 0.0;
      data[2 * i + 1] = w > 1 ? 2.0 * c / (w - 1) - 1.0 : 0.0;
    }
  }
  return Tensor({h * w, 2}, std::move(data));
}

Tensor sinusoid_image(std::size_t h, std::size_t w) {
  std::vector<double> data(h * w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double y = h > 1 ? 2.0 * r / (h - 1) - 1.0 : 0.0;
      const double x = w > 1 ? 2.0 * c / (w - 1) - 1.0 : 0.0;
      double v = std::sin(3.0 * M_PI * x) + std::sin(2.0 * M_PI * y) +
                 0.5 * std::sin(4.0 * M_PI * (x + y)) +
                 0.5 * std::cos(5.0 * M_PI * x * y);
      data[r * w + c] = 0.5 + v / 6.0;  // into [0,1]
    }
  }
  return Tensor({h, w}, std::move(data));
}

double psnr_db(const Tensor& target, const Tensor& pred) {
  if (target.size() != pred.size()) {
    throw std::invalid_argument("psnr: size mismatch");
  }
  const double mse = (target.vec() - pred.vec()).squaredNorm() /
                     static_cast<double>(target.size());
  if (mse == 0.0) return 200.0;
  return -10.0 * std::log10(mse);
}

FitResult fit_image(SirenDeq& model, const Tensor& image,
                    const deq::DeqConfig& cfg, optim::Optimizer& opt,
                    int steps, int eval_every, reg::ProbeRng* rng) {
  if (image.shape().size() != 2 && image.cols() != 1) {
    throw std::invalid_argument("fit_image: image must be a [h,w] grid");
  }
  if (!image.all_finite()) {
    throw std::invalid_argument("fit_image: image must be finite");
  }
  const std::size_t n_px = image.size();
  Tensor coords = coord_grid(image.rows(), image.cols());
  deq::Batch batch{coords, image.with_shape({n_px, 1})};

  FitResult out;
  deq::StepOptions options;
  options.rng = rng;

  auto eval_psnr = [&]() {
    norm::reset_norm(model);
    deq::StateGroup state = deq::forward_output(model, batch.x, cfg);
    return psnr_db(batch.y, model.decode(state));
  };
  out.psnr_trace.push_back(eval_psnr());  // initialization baseline

  for (int s = 0; s < steps; ++s) {
    deq::StepMetrics m;
    try {
      m = deq::train_step(model, batch, opt, cfg, options);
    } catch (const NonFiniteError&) {
      out.diverged = true;
      break;
    }
    out.steps_run = s + 1;
    out.loss_trace.push_back(m.loss);
    if ((s + 1) % eval_every == 0 || s + 1 == steps) {
      Tensor pred = model.decode(m.output_state);
      out.psnr_trace.push_back(psnr_db(batch.y, pred));
    }
  }
  if (!out.psnr_trace.empty()) out.final_psnr = out.psnr_trace.back();
  return out;
}

// ------------------------------------------------------------------ IGNN

ToyGraph two_community_graph(int n, std::uint64_t seed, double p_in,
                             double p_out, std::size_t feat_dim,
                             double signal) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss;

  Eigen::MatrixXd adj = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const bool same = (i < n / 2) == (j < n / 2);
      if (unif(rng) < (same ? p_in : p_out)) adj(i, j) = adj(j, i) = 1.0;
    }
  }
  adj += Eigen::MatrixXd::Identity(n, n);  // self loops
  Eigen::VectorXd deg = adj.rowwise().sum();
  Eigen::VectorXd dinv = deg.array().rsqrt();
  Eigen::MatrixXd a_norm = dinv.asDiagonal() * adj * dinv.asDiagonal();

  ToyGraph g;
  g.adjacency_norm = a_norm;
  std::vector<double> feats(n * feat_dim);
  std::vector<double> onehot(n * 2, 0.0);
  g.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    const int label = i < n / 2 ? 0 : 1;
    g.labels[i] = label;
    onehot[i * 2 + label] = 1.0;
    for (std::size_t f = 0; f < feat_dim; ++f) {
      const double mean = (label == 0 ? signal : -signal) * (f % 2 ? 1 : -1);
      feats[i * feat_dim + f] = mean + 0.5 * gauss(rng);
    }
  }
  g.features = Tensor({static_cast<std::size_t>(n), feat_dim}, std::move(feats));
  g.labels_onehot = Tensor({static_cast<std::size_t>(n), 2}, std::move(onehot));
  return g;
}

ToyIgnn::ToyIgnn(const ToyGraph& graph, std::size_t hidden_,
                 std::uint64_t seed, double weight_scale)
    : nodes(graph.adjacency_norm.rows()), hidden(hidden_) {
  std::mt19937_64 rng(seed);
  a_norm = mat_tensor(graph.adjacency_norm);
  const std::size_t feat_dim = graph.features.cols();
  w = mat_tensor(with_spectral_norm(hidden, weight_scale, rng));
  w_u = mat_tensor(gaussian_matrix(hidden, feat_dim, rng,
                                   1.0 / std::sqrt(double(feat_dim))));
  w_d = mat_tensor(
      gaussian_matrix(2, hidden, rng, 1.0 / std::sqrt(double(hidden))));
}

std::vector<ParamRef> ToyIgnn::param_refs() {
  return {{"ignn.weight", &w, true},
          {"ignn.inject", &w_u, true},
          {"decode.weight", &w_d, true}};
}

deq::StateGroup ToyIgnn::equilibrium(const deq::StateGroup& z,
                                     const Tensor& x) {
  Tensor prop = matmul(matmul(a_norm, z.primary()), transpose(w));
  return deq::StateGroup(relu(add(prop, matmul(x, transpose(w_u)))));
}

Tensor ToyIgnn::decode(const deq::StateGroup& z) {
  return matmul(z.primary(), transpose(w_d));
}

deq::StateGroup ToyIgnn::initial_state(const Tensor&) {
  return deq::StateGroup(Tensor::zeros({nodes, hidden}));
}

double accuracy(const Tensor& logits, const std::vector<int>& labels) {
  const std::size_t n = labels.size();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int pred = logits[i * 2] >= logits[i * 2 + 1] ? 0 : 1;
    if (pred == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

// ------------------------------------------------------------- DEQ-DDIM

void ddim_matrices(int T, const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                   const Eigen::VectorXd& c, Eigen::MatrixXd& A,
                   Eigen::MatrixXd& R, Eigen::MatrixXd& Bm,
                   Eigen::MatrixXd& Cm) {
  if (T < 1 || a.size() != T || b.size() != T || c.size() != T) {
    throw std::invalid_argument("ddim_matrices: bad sizes");
  }
  A = Eigen::MatrixXd::Zero(T, T);
  R = Eigen::MatrixXd::Zero(T, T);
  Bm = Eigen::MatrixXd::Zero(T, T);
  Cm = Eigen::MatrixXd::Zero(T, T);
  for (int i = 1; i <= T; ++i) {
    double prod = 1.0;
    for (int j = i; j <= T; ++j) prod *= a[j - 1];
    A(i - 1, i - 1) = prod;
    Bm(i - 1, i - 1) = b[i - 1];
    Cm(i - 1, i - 1) = c[i - 1];
    R(i - 1, i - 1) = 1.0;
    double r = 1.0;
    for (int k = i + 1; k <= T; ++k) {
      r *= a[k - 2];  // a_{k-1}
      R(i - 1, k - 1) = r;
    }
  }
}

DiffusionChain make_toy_chain(int T, int dim, std::uint64_t seed,
                              bool deterministic) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss;
  DiffusionChain ch;
  ch.T = T;
  ch.dim = dim;
  ch.a.resize(T);
  ch.b.resize(T);
  ch.c.resize(T);
  for (int t = 0; t < T; ++t) {
    ch.a[t] = 0.9 + 0.1 * unif(rng);
    ch.b[t] = 0.1 * unif(rng);
    ch.c[t] = deterministic ? 0.0 : 0.1 * unif(rng);
  }
  ddim_matrices(T, ch.a, ch.b, ch.c, ch.A, ch.R, ch.B, ch.C);
  ch.z_T.resize(dim);
  for (int i = 0; i < dim; ++i) ch.z_T[i] = gauss(rng);
  ch.x_noise.resize(T);
  for (int t = 0; t < T; ++t) {
    ch.x_noise[t].resize(dim);
    for (int i = 0; i < dim; ++i) ch.x_noise[t][i] = gauss(rng);
  }
  return ch;
}

Denoiser make_toy_denoiser(int T, int dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto mats = std::make_shared<std::vector<Eigen::MatrixXd>>();
  auto offsets = std::make_shared<std::vector<Eigen::VectorXd>>();
  std::normal_distribution<double> gauss;
  for (int t = 0; t < T; ++t) {
    Eigen::MatrixXd m = with_spectral_norm(dim, 0.6, rng);
    mats->push_back(m);
    Eigen::VectorXd off(dim);
    for (int i = 0; i < dim; ++i) off[i] = 0.3 * gauss(rng);
    offsets->push_back(off);
  }
  return [mats, offsets](const Eigen::VectorXd& z, int t) -> Eigen::VectorXd {
    return (*mats)[t - 1] * z + (*offsets)[t - 1];
  };
}

Eigen::VectorXd ddim_stacked_apply(const DiffusionChain& ch,
                                   const Denoiser& eps,
                                   const Eigen::VectorXd& traj) {
  const int T = ch.T, d = ch.dim;
  if (traj.size() != static_cast<Eigen::Index>(T) * d) {
    throw std::invalid_argument("ddim_stacked_apply: bad trajectory size");
  }
  // denoiser column: eps(z_k, k) with z_T taken from the injection
  std::vector<Eigen::VectorXd> eps_col(T);
  for (int k = 1; k <= T; ++k) {
    const Eigen::VectorXd zk =
        k == T ? ch.z_T : Eigen::VectorXd(traj.segment(k * d, d));
    eps_col[k - 1] = eps(zk, k);
  }
  Eigen::VectorXd out(T * d);
  for (int i = 1; i <= T; ++i) {
    Eigen::VectorXd row = ch.A(i - 1, i - 1) * ch.z_T;
    for (int k = i; k <= T; ++k) {
      row += ch.R(i - 1, k - 1) *
             (ch.B(k - 1, k - 1) * eps_col[k - 1] +
              ch.C(k - 1, k - 1) * ch.x_noise[k - 1]);
    }
    out.segment((i - 1) * d, d) = row;
  }
  return out;
}

std::vector<Eigen::VectorXd> ddim_sequential(const DiffusionChain& ch,
                                             const Denoiser& eps) {
  std::vector<Eigen::VectorXd> traj(ch.T);
  Eigen::VectorXd z = ch.z_T;
  for (int t = ch.T; t >= 1; --t) {
    z = ch.a[t - 1] * z + ch.b[t - 1] * eps(z, t) +
        ch.c[t - 1] * ch.x_noise[t - 1];
    traj[t - 1] = z;  // z_{t-1}
  }
  return traj;
}

ParallelResult ddim_parallel(const DiffusionChain& ch, const Denoiser& eps,
                             const solvers::SolverConfig& cfg) {
  const int T = ch.T, d = ch.dim;
  Eigen::VectorXd z0(T * d);
  for (int i = 0; i < T; ++i) z0.segment(i * d, d) = ch.z_T;
  auto f = [&](const Eigen::VectorXd& traj) {
    return ddim_stacked_apply(ch, eps, traj);
  };
  ParallelResult out;
  out.solver = solvers::solve(f, z0, cfg);
  out.trajectory.resize(T);
  for (int i = 0; i < T; ++i) {
    out.trajectory[i] = out.solver.z_best.segment(i * d, d);
  }
  return out;
}

// ------------------------------------------------- benchmark toy models

ContractiveTanhDeq::ContractiveTanhDeq(std::size_t dim_, std::uint64_t seed,
                                       double contraction)
    : dim(dim_) {
  std::mt19937_64 rng(seed);
  w = mat_tensor(with_spectral_norm(dim, contraction, rng));
  u = mat_tensor(gaussian_matrix(dim, dim, rng, 0.4));
  b = mat_tensor(gaussian_matrix(dim, 1, rng, 0.2));
  d = mat_tensor(gaussian_matrix(1, dim, rng, 0.5));
}

std::vector<ParamRef> ContractiveTanhDeq::param_refs() {
  return {{"f.weight", &w, true},
          {"f.inject", &u, true},
          {"f.bias", &b, false},
          {"decode.weight", &d, true}};
}

deq::StateGroup ContractiveTanhDeq::equilibrium(const deq::StateGroup& z,
                                                const Tensor& x) {
  return deq::StateGroup(
      tanh(add(add(matmul(w, z.primary()), matmul(u, x)), b)));
}

Tensor ContractiveTanhDeq::decode(const deq::StateGroup& z) {
  return matmul(d, z.primary());
}

deq::StateGroup ContractiveTanhDeq::initial_state(const Tensor&) {
  return deq::StateGroup(Tensor::zeros({dim, 1}));
}

}  // namespace eqsolve::zoo
