#include <chrono>

#include "commands.hpp"
#include "eqsolve/zoo.hpp"
#include "oracle_utils.hpp"

namespace eqsolve::cli {

namespace {

struct RunState {
  double max_residual = 0.0;
  double last_loss = 0.0;
  bool diverged = false;
  bool non_finite = false;
  int steps_run = 0;
};

// Shared training loop: per-step records, divergence bookkeeping.
RunState train_loop(deq::DeqModel& model, const deq::Batch& batch,
                    optim::Optimizer& opt, const deq::DeqConfig& cfg,
                    reg::ProbeRng& rng, int steps, int log_every,
                    RecordWriter& out, bool timing,
                    const std::function<json(const deq::StepMetrics&)>& extra =
                        nullptr) {
  RunState rs;
  deq::StepOptions options;
  options.rng = &rng;
  const auto start = std::chrono::steady_clock::now();
  for (int s = 0; s < steps; ++s) {
    deq::StepMetrics m;
    try {
      m = deq::train_step(model, batch, opt, cfg, options);
    } catch (const NonFiniteError& e) {
      rs.non_finite = rs.diverged = true;
      out.write(json{{"record", "event"},
                     {"step", s},
                     {"kind", "non_finite"},
                     {"what", e.what()}});
      break;
    }
    rs.steps_run = s + 1;
    rs.last_loss = m.loss;
    rs.max_residual = std::max(rs.max_residual, m.residual);
    if (m.residual >= 1.0) rs.diverged = true;
    if ((s + 1) % log_every == 0 || s + 1 == steps) {
      json rec{{"record", "step"},
               {"step", s + 1},
               {"loss", m.loss},
               {"rel_residual", m.residual},
               {"f_evals", m.steps},
               {"converged", m.converged},
               {"wall_ms", wall_ms_since(start, timing)}};
      if (extra) {
        for (auto& [k, v] : extra(m).items()) rec[k] = v;
      }
      out.write(rec);
    }
  }
  return rs;
}

}  // namespace

int run_train(const DeqArgs& deq_args, const TrainArgs& args) {
  RecordWriter out(deq_args.out_path);
  emit_header(out, "train", deq_args,
              json{{"task", args.task},
                   {"steps", args.steps},
                   {"lr", args.lr},
                   {"hidden", args.hidden},
                   {"image_size", args.image_size},
                   {"graph_nodes", args.graph_nodes},
                   {"weight_scale", args.weight_scale}});

  deq::DeqConfig cfg = deq_args.deq_config();
  reg::ProbeRng rng(deq_args.seed);
  optim::Adam opt(args.lr);
  json summary{{"record", "summary"}, {"task", args.task}};
  RunState rs;

  if (args.task == "linear") {
    zoo::ContractiveTanhDeq model(args.hidden, deq_args.seed);
    norm::apply_norm(model, deq_args.norm_options());
    deq::Batch batch{
        gaussian_tensor({static_cast<std::size_t>(args.hidden), 1},
                        deq_args.seed + 11),
        gaussian_tensor({1, 1}, deq_args.seed + 12)};
    rs = train_loop(model, batch, opt, cfg, rng, args.steps, args.log_every,
                    out, deq_args.timing);
    summary["final_loss"] = rs.last_loss;
  } else if (args.task == "siren") {
    zoo::SirenDeq model(args.hidden, 2, 1, deq_args.seed, 0.9);
    norm::apply_norm(model, deq_args.norm_options());
    Tensor image = zoo::sinusoid_image(args.image_size, args.image_size);
    auto fit = zoo::fit_image(model, image, cfg, opt, args.steps,
                              std::max(args.log_every, 1), &rng);
    for (std::size_t i = 0; i < fit.psnr_trace.size(); ++i) {
      out.write(json{{"record", "eval"},
                     {"index", i},
                     {"psnr_db", fit.psnr_trace[i]}});
    }
    rs.diverged = rs.non_finite = fit.diverged;
    rs.steps_run = fit.steps_run;
    rs.last_loss = fit.loss_trace.empty() ? 0.0 : fit.loss_trace.back();
    summary["psnr_db"] = fit.final_psnr;
    summary["final_loss"] = rs.last_loss;
  } else if (args.task == "ignn") {
    auto graph = zoo::two_community_graph(args.graph_nodes, deq_args.seed);
    zoo::ToyIgnn model(graph, args.hidden, deq_args.seed + 1,
                       args.weight_scale);
    norm::NormOptions nopts = deq_args.norm_options();
    nopts.filter_out = {"inject", "decode"};
    norm::apply_norm(model, nopts);
    deq::Batch batch{graph.features, graph.labels_onehot};
    auto acc_of = [&](const deq::StepMetrics& m) {
      return json{{"accuracy",
                   zoo::accuracy(model.decode(m.output_state), graph.labels)}};
    };
    rs = train_loop(model, batch, opt, cfg, rng, args.steps, args.log_every,
                    out, deq_args.timing, acc_of);
    if (!rs.non_finite) {
      deq::StateGroup state = deq::forward_output(model, batch.x, cfg);
      summary["accuracy"] = zoo::accuracy(model.decode(state), graph.labels);
    }
    summary["final_loss"] = rs.last_loss;
  } else {
    throw CLI::ValidationError("--task", "unknown task: " + args.task);
  }

  summary["steps_run"] = rs.steps_run;
  summary["max_rel_residual"] = rs.max_residual;
  summary["diverged"] = rs.diverged;
  summary["non_finite"] = rs.non_finite;
  out.write(summary);
  return rs.non_finite ? 1 : 0;
}

}  // namespace eqsolve::cli
