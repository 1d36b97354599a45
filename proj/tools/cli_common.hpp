#pragma once

#include <fstream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "eqsolve/deq.hpp"

namespace eqsolve::cli {

using nlohmann::json;

// Shared flag surface (the add_deq_args decorator): solver, backward,
// normalization, and regularization options plus the run plumbing.
struct DeqArgs {
  std::uint64_t seed = 0;
  std::string out_path;
  std::string config_path;
  bool timing = false;

  bool ift = false;
  int grad_steps = 1;  // --grad K (phantom steps)
  double tau = 1.0;
  std::string f_solver = "fixed_point_iter";
  std::string b_solver = "fixed_point_iter";
  int f_max_iter = 40;
  int b_max_iter = 30;
  double f_tol = 1e-6;
  double b_tol = 1e-6;
  int m = 6;
  double lam = 1e-4;
  double alpha = 1.0;

  std::string norm_type = "none";
  bool norm_no_scale = false;
  bool norm_clip = false;
  double norm_clip_value = 1.0;

  std::vector<int> indexing;
  int n_states = 1;
  double jac_reg_weight = 0.0;
  std::string init = "zeros";

  deq::DeqConfig deq_config() const;
  norm::NormOptions norm_options() const;
  json to_json() const;
};

void add_deq_args(CLI::App& app, DeqArgs& args);

// Expands `--config <path>` by splicing the file's key=value pairs (flag
// names without dashes, one per line) right after the subcommand token, so
// explicit flags given later override them.
std::vector<std::string> inject_config(std::vector<std::string> args);

// Line-delimited record stream: stdout plus an optional file copy.
class RecordWriter {
 public:
  explicit RecordWriter(const std::string& out_path);
  void write(const json& record);

 private:
  std::optional<std::ofstream> file_;
};

void emit_header(RecordWriter& w, const std::string& subcommand,
                 const DeqArgs& args, const json& extra = json::object());

double wall_ms_since(std::chrono::steady_clock::time_point start, bool timing);

}  // namespace eqsolve::cli
