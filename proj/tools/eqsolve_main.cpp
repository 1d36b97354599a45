#include <cstdlib>
#include <iostream>

#include <spdlog/spdlog.h>

#include "commands.hpp"

namespace {

void init_logging() {
  spdlog::set_level(spdlog::level::err);
  if (const char* env = std::getenv("EQSOLVE_LOG")) {
    const std::string level(env);
    if (level == "info") {
      spdlog::set_level(spdlog::level::info);
    } else if (level == "debug") {
      spdlog::set_level(spdlog::level::debug);
    } else if (level != "error") {
      spdlog::warn("EQSOLVE_LOG: unknown level '{}', using error", level);
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  init_logging();
  CLI::App app{"eqsolve: equilibrium-model solver and training harness"};
  app.require_subcommand(1);
  // later occurrences win, so config-file values yield to explicit flags
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  eqsolve::cli::DeqArgs deq_args;
  eqsolve::cli::BenchArgs bench_args;
  eqsolve::cli::GradCheckArgs grad_args;
  eqsolve::cli::TrainArgs train_args;
  eqsolve::cli::DdimArgs ddim_args;

  auto* bench = app.add_subcommand(
      "bench-solvers", "solver benchmarks on seeded problem families");
  eqsolve::cli::add_deq_args(*bench, deq_args);
  bench->add_option("--n", bench_args.dim, "problem dimension");
  bench->add_option("--rho", bench_args.rho, "spectral norm of the map");
  bench->add_option("--problems", bench_args.problems, "family size");
  bench->add_flag("--emit_trace", bench_args.emit_trace,
                  "include residual traces in records");
  bench->add_option("--solvers", bench_args.solvers, "subset to benchmark");

  auto* gc = app.add_subcommand("grad-check",
                                "gradient fidelity and descent checks");
  eqsolve::cli::add_deq_args(*gc, deq_args);
  gc->add_option("--dim", grad_args.dim, "equilibrium dimension");
  gc->add_option("--problems", grad_args.problems, "seeded problem count");

  auto* train = app.add_subcommand("train", "toy training runs");
  eqsolve::cli::add_deq_args(*train, deq_args);
  train->add_option("--task", train_args.task, "linear | siren | ignn");
  train->add_option("--steps", train_args.steps, "optimization steps");
  train->add_option("--lr", train_args.lr, "learning rate");
  train->add_option("--hidden", train_args.hidden, "hidden width");
  train->add_option("--image_size", train_args.image_size, "target grid side");
  train->add_option("--graph_nodes", train_args.graph_nodes, "IGNN nodes");
  train->add_option("--weight_scale", train_args.weight_scale,
                    "IGNN initial spectral norm");
  train->add_option("--log_every", train_args.log_every, "record cadence");

  auto* ddim = app.add_subcommand("ddim-demo",
                                  "parallel vs sequential sampling");
  eqsolve::cli::add_deq_args(*ddim, deq_args);
  ddim->add_option("--T", ddim_args.T, "chain length");
  ddim->add_option("--dim", ddim_args.dim, "sample dimension");
  ddim->add_flag("--stochastic", ddim_args.stochastic,
                 "keep trajectory noise (c_t > 0)");

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = eqsolve::cli::inject_config(std::move(args));
    std::vector<const char*> cargv;
    cargv.push_back(argv[0]);
    for (const std::string& a : args) cargv.push_back(a.c_str());
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (bench->parsed()) {
      return eqsolve::cli::run_bench_solvers(deq_args, bench_args);
    }
    if (gc->parsed()) return eqsolve::cli::run_grad_check(deq_args, grad_args);
    if (train->parsed()) return eqsolve::cli::run_train(deq_args, train_args);
    if (ddim->parsed()) return eqsolve::cli::run_ddim_demo(deq_args, ddim_args);
  } catch (const eqsolve::NonFiniteError& e) {
    std::cerr << "non-finite failure: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
