#pragma once

#include "cli_common.hpp"

namespace eqsolve::cli {

struct BenchArgs {
  int dim = 64;
  double rho = 0.95;
  int problems = 50;
  bool emit_trace = false;
  std::vector<std::string> solvers;  // empty: all three
};

struct GradCheckArgs {
  int dim = 12;
  int problems = 20;
};

struct TrainArgs {
  std::string task = "linear";
  int steps = 200;
  double lr = 1e-2;
  int hidden = 24;
  int image_size = 32;
  int graph_nodes = 60;
  double weight_scale = 0.5;
  int log_every = 10;
};

struct DdimArgs {
  int T = 32;
  int dim = 4;
  bool stochastic = false;
};

int run_bench_solvers(const DeqArgs& deq_args, const BenchArgs& args);
int run_grad_check(const DeqArgs& deq_args, const GradCheckArgs& args);
int run_train(const DeqArgs& deq_args, const TrainArgs& args);
int run_ddim_demo(const DeqArgs& deq_args, const DdimArgs& args);

}  // namespace eqsolve::cli
