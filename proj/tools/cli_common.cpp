#include "cli_common.hpp"

#include <chrono>
#include <iostream>
#include <sstream>

namespace eqsolve::cli {

deq::DeqConfig DeqArgs::deq_config() const {
  deq::DeqConfig cfg;
  cfg.f_solver.kind = solvers::solver_kind_from_string(f_solver);
  cfg.f_solver.max_iter = f_max_iter;
  cfg.f_solver.tol = f_tol;
  cfg.f_solver.m = m;
  cfg.f_solver.lam = lam;
  cfg.f_solver.alpha = alpha;
  cfg.f_solver.tau = tau;

  cfg.grad.mode = ift ? backward::GradConfig::Mode::IFT
                      : backward::GradConfig::Mode::PG;
  cfg.grad.K = grad_steps;
  cfg.grad.tau = tau;
  cfg.grad.b_solver.kind = solvers::solver_kind_from_string(b_solver);
  cfg.grad.b_solver.max_iter = b_max_iter;
  cfg.grad.b_solver.tol = b_tol;
  cfg.grad.b_solver.m = m;

  if (!indexing.empty() || n_states > 1) {
    reg::CorrectionConfig corr;
    corr.indexing = indexing;
    corr.n_states = n_states;
    corr.variant = reg::CorrectionConfig::Variant::supervise_states;
    cfg.correction = corr;
  }
  cfg.jac_reg_weight = jac_reg_weight;
  cfg.init = init == "mixed" ? deq::InitMode::mixed : deq::InitMode::zeros;
  return cfg;
}

norm::NormOptions DeqArgs::norm_options() const {
  norm::NormOptions opts;
  opts.kind = norm::norm_kind_from_string(norm_type);
  opts.no_scale = norm_no_scale;
  if (norm_clip) opts.clip_t = norm_clip_value;
  return opts;
}

json DeqArgs::to_json() const {
  return json{{"seed", seed},
              {"ift", ift},
              {"grad", grad_steps},
              {"tau", tau},
              {"f_solver", f_solver},
              {"b_solver", b_solver},
              {"f_max_iter", f_max_iter},
              {"b_max_iter", b_max_iter},
              {"f_tol", f_tol},
              {"b_tol", b_tol},
              {"m", m},
              {"lam", lam},
              {"alpha", alpha},
              {"norm_type", norm_type},
              {"norm_no_scale", norm_no_scale},
              {"norm_clip", norm_clip},
              {"norm_clip_value", norm_clip_value},
              {"indexing", indexing},
              {"n_states", n_states},
              {"jac_reg_weight", jac_reg_weight},
              {"init", init}};
}

void add_deq_args(CLI::App& app, DeqArgs& args) {
  app.add_option("--seed", args.seed, "RNG seed");
  app.add_option("--out", args.out_path, "write records to this file too");
  app.add_flag("--timing", args.timing, "include wall-clock timings");

  app.add_flag("--ift", args.ift, "implicit differentiation backward");
  app.add_option("--grad", args.grad_steps, "phantom gradient unroll steps");
  app.add_option("--tau", args.tau, "damping factor");
  app.add_option("--f_solver", args.f_solver,
                 "fixed_point_iter | anderson | broyden");
  app.add_option("--b_solver", args.b_solver, "backward solver");
  app.add_option("--f_max_iter", args.f_max_iter, "forward solver budget");
  app.add_option("--b_max_iter", args.b_max_iter, "backward solver budget");
  app.add_option("--f_tol", args.f_tol, "forward stopping tolerance");
  app.add_option("--b_tol", args.b_tol, "backward stopping tolerance");
  app.add_option("--m", args.m, "history size / rank budget");
  app.add_option("--lam", args.lam, "Anderson least-squares regularizer");
  app.add_option("--alpha", args.alpha, "Broyden step size");

  app.add_option("--norm_type", args.norm_type,
                 "weight_norm | spectral_norm | none");
  app.add_flag("--norm_no_scale", args.norm_no_scale,
               "drop the learnable scale g");
  app.add_flag("--norm_clip", args.norm_clip, "clip the rescaling factor");
  app.add_option("--norm_clip_value", args.norm_clip_value, "clip threshold");

  app.add_option("--indexing", args.indexing,
                 "solver iterations to sample for correction");
  app.add_option("--n_states", args.n_states, "uniformly sampled states");
  app.add_option("--jac_reg_weight", args.jac_reg_weight,
                 "Jacobian regularization weight");
  app.add_option("--init", args.init, "zeros | mixed");

  app.add_option("--config", args.config_path,
                 "line-oriented key=value config file");
}

std::vector<std::string> inject_config(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    }
  }
  if (path.empty() || args.empty()) return args;

  std::ifstream file(path);
  if (!file.good()) {
    throw std::runtime_error("cannot read config file: " + path);
  }
  std::vector<std::string> injected;
  std::string line;
  while (std::getline(file, line)) {
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const char* ws = " \t\r";
      s.erase(0, s.find_first_not_of(ws));
      s.erase(s.find_last_not_of(ws) + 1);
      return s;
    };
    const std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) continue;
    if (value.find_first_of(" \t") != std::string::npos) {
      injected.push_back("--" + key);
      std::istringstream parts(value);
      std::string part;
      while (parts >> part) injected.push_back(part);
    } else {
      injected.push_back("--" + key + "=" + value);
    }
  }
  // splice after the subcommand token
  args.insert(args.begin() + 1, injected.begin(), injected.end());
  return args;
}

RecordWriter::RecordWriter(const std::string& out_path) {
  if (!out_path.empty()) {
    file_.emplace(out_path);
    if (!file_->good()) {
      throw std::runtime_error("cannot open output file: " + out_path);
    }
  }
}

void RecordWriter::write(const json& record) {
  const std::string line = record.dump();
  std::cout << line << "\n";
  if (file_) (*file_) << line << "\n";
}

void emit_header(RecordWriter& w, const std::string& subcommand,
                 const DeqArgs& args, const json& extra) {
  json header{{"record", "header"},
              {"subcommand", subcommand},
              {"config", args.to_json()}};
  for (auto& [k, v] : extra.items()) header["config"][k] = v;
  w.write(header);
}

double wall_ms_since(std::chrono::steady_clock::time_point start,
                     bool timing) {
  if (!timing) return 0.0;
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - start)
      .count();
}

}  // namespace eqsolve::cli
