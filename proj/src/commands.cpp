#include "dpadaln/commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fmt/format.h>

#include "dpadaln/atomic_io.hpp"
#include "dpadaln/diffusion.hpp"

namespace dpadaln::cmd {

namespace fs = std::filesystem;

namespace {

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

double p99(const std::vector<double>& v) { return v.empty() ? 0.0 : diag::percentile(v, 0.99); }

bool same_model(const model::ModelConfig& a, const model::ModelConfig& b) {
  return a.depth == b.depth && a.hidden == b.hidden && a.heads == b.heads && a.seq_len == b.seq_len &&
         a.channels == b.channels && a.cond_dim == b.cond_dim && a.mlp_ratio == b.mlp_ratio &&
         a.time_embed_dim == b.time_embed_dim;
}

/// Bounds the DP-aware variant of `cfg` would use, even when the run itself is unbounded.
model::BoundConfig aware_bounds(const run::RunConfig& cfg) {
  return cfg.bounds_enabled() ? cfg.effective_bounds() : cfg.bounds.scaled(cfg.tightness);
}

}  // namespace

sens::ArchConstants constants_from_groups(const std::vector<train::GroupNorms>& groups, double margin) {
  sens::ArchConstants k;
  double a_c = 0.0, a_alpha = 0.0, rest = 0.0;
  for (const auto& g : groups) {
    a_c = std::max(a_c, g.mod_bias);
    rest = std::max(rest, g.rest);
    if (g.alpha_abs > 1e-12) a_alpha = std::max(a_alpha, g.f_net / g.alpha_abs);
  }
  k.A0 = margin * rest;
  k.a_c = margin * a_c;
  k.a_alpha = margin * a_alpha;
  return k;
}

sens::ReferenceMagnitudes references_from_run(const train::TrainResult& r) {
  sens::ReferenceMagnitudes refs;
  refs.C_ref = p99(r.cond_norm);
  refs.Gamma_ref = p99(r.gamma_abs);
  refs.B_ref = p99(r.beta_abs);
  refs.A_ref = p99(r.alpha_abs);
  return refs;
}

TrainOutcome cmd_train(const run::RunConfig& cfg, const std::string& out_dir, const train::TrainOptions& options) {
  cfg.validate();
  const train::Dataset data = train::load_dataset(cfg);
  train::TrainOptions opt = options;
  opt.record_groups = true;
  TrainOutcome out;
  out.result = train::train(cfg, data, opt);

  out.paths.config = join(out_dir, "config.ini");
  out.paths.checkpoint = join(out_dir, "checkpoint.txt");
  out.paths.grad_log = join(out_dir, "grad_log.csv");
  out.paths.report = join(out_dir, "report.txt");
  out.paths.bound_report = join(out_dir, "bounds.txt");

  io::write_file_atomic(out.paths.config, cfg.to_ini());
  ckpt::Checkpoint ck;
  ck.config = cfg;
  ck.step = out.result.optim.step;
  ck.params = out.result.params;
  ck.ema = out.result.optim.ema;
  ck.save(out.paths.checkpoint);
  out.result.log.write_csv(out.paths.grad_log);
  io::write_file_atomic(out.paths.report, train::format_report(cfg, out.result));

  const auto refs = references_from_run(out.result);
  std::string bound_text = fmt::format("# constants and references estimated from this run; bounds_enabled = {}\n",
                                       cfg.bounds_enabled());
  if (refs.C_ref > 0.0 && refs.Gamma_ref > 0.0 && refs.B_ref > 0.0 && refs.A_ref > 0.0) {
    const double C = std::isfinite(cfg.dp.clip_C) ? cfg.dp.clip_C : 1.0;
    bound_text += sens::format_bound_report(
        sens::make_bound_report(constants_from_groups(out.result.groups), aware_bounds(cfg), refs, C));
  } else {
    bound_text += "# reference magnitudes are zero; no ratio reported\n";
  }
  io::write_file_atomic(out.paths.bound_report, bound_text);
  return out;
}

std::string cmd_diagnose(const diag::GradientLog& vanilla, const diag::GradientLog& aware, double C,
                         const std::string& out_dir) {
  if (!(C > 0.0)) throw Error("diagnose: C must be positive");
  if (vanilla.empty() || aware.empty()) throw Error("diagnose: empty gradient log");
  if (auto m = diag::check_clip_threshold(vanilla.records(), C)) throw Error("diagnose: vanilla log: " + *m);
  if (auto m = diag::check_clip_threshold(aware.records(), C)) throw Error("diagnose: aware log: " + *m);

  const diag::NamedRun v{"DP-vanilla", diag::TailSummary::from(vanilla), diag::clip_stats(vanilla.records(), C)};
  const diag::NamedRun a{"DP-aware", diag::TailSummary::from(aware), diag::clip_stats(aware.records(), C)};
  std::string report = fmt::format("# C = {}\n# records: vanilla {}, aware {}\n\n", C, vanilla.size(), aware.size());
  report += "[gradient_norms]\n" + diag::format_tail_table({v, a});
  report += "\n[clipping]\n" + diag::format_clip_table({v, a});

  if (!out_dir.empty()) {
    io::write_file_atomic(join(out_dir, "diagnose.txt"), report);
    for (auto p : {diag::Partition::total, diag::Partition::cond, diag::Partition::other}) {
      // One grid per partition so the two curves share abscissae.
      std::vector<double> pooled = vanilla.column(p);
      const auto col_a = aware.column(p);
      pooled.insert(pooled.end(), col_a.begin(), col_a.end());
      const auto grid = diag::log_grid(pooled);
      const std::string part(to_string(p));
      io::write_file_atomic(join(out_dir, "cdf_vanilla_" + part + ".csv"),
                            diag::cdf_csv(diag::ecdf_ccdf_export(vanilla.column(p), grid)));
      io::write_file_atomic(join(out_dir, "cdf_aware_" + part + ".csv"),
                            diag::cdf_csv(diag::ecdf_ccdf_export(col_a, grid)));
    }
  }
  return report;
}

Task parse_task(std::string_view s) {
  if (s == "interpolation") return Task::interpolation;
  if (s == "forecasting") return Task::forecasting;
  throw Error(fmt::format("unknown task '{}' (expected interpolation or forecasting)", s));
}

std::string_view to_string(Task t) { return t == Task::interpolation ? "interpolation" : "forecasting"; }

std::vector<data::MaskSpec> eval_masks(const run::RunConfig& cfg, const EvalOptions& opt, std::size_t count) {
  const std::size_t L = cfg.model.seq_len;
  CounterRng rng(opt.seed, 5);
  std::vector<data::MaskSpec> masks;
  for (std::size_t i = 0; i < count; ++i) {
    if (opt.task == Task::forecasting) {
      masks.push_back(data::block_mask(L, opt.pred_len > 0 ? opt.pred_len : cfg.masks.pred_len_max));
    } else if (i % 2 == 0) {
      masks.push_back(data::random_mask(L, rng.uniform(cfg.masks.ratio_min, cfg.masks.ratio_max), rng));
    } else {
      const std::size_t nb = cfg.masks.blocks_min + rng.index(cfg.masks.blocks_max - cfg.masks.blocks_min + 1);
      masks.push_back(data::stride_mask(L, nb, rng));
    }
  }
  return masks;
}

metrics::MetricReport evaluate_windows(const run::RunConfig& cfg, const ParamSet& params,
                                       const std::vector<data::SeriesWindow>& windows,
                                       const std::vector<data::MaskSpec>& masks, std::uint64_t seed) {
  if (windows.empty()) throw Error("evaluate: no windows");
  if (masks.size() != windows.size()) throw Error("evaluate: one mask per window required");
  const model::DenoiserModel net(cfg.model, cfg.effective_bounds());
  if (!net.init_params(0).same_layout(params)) throw Error("evaluate: parameters do not match the model configuration");
  const auto sched = cfg.schedule();
  CounterRng rng(seed, 6);
  metrics::MetricAccumulator acc;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    masks[i].validate();
    const Tensor pred = diffusion::sample_conditional(net, params, windows[i].values, masks[i], sched, rng);
    acc.add_window(pred, windows[i].values, masks[i].bits);
  }
  return acc.finish();
}

metrics::MetricReport cmd_evaluate(const ckpt::Checkpoint& checkpoint, const run::RunConfig& data_cfg,
                                   const EvalOptions& opt) {
  if (!same_model(checkpoint.config.model, data_cfg.model)) {
    throw Error("evaluate: model section of the configuration differs from the checkpoint");
  }
  run::RunConfig cfg = checkpoint.config;
  cfg.data = data_cfg.data;
  cfg.masks = data_cfg.masks;
  const train::Dataset data = train::load_dataset(cfg);
  std::vector<data::SeriesWindow> windows = data.test;
  if (windows.empty()) throw Error("evaluate: test split has no windows");
  if (opt.max_windows > 0 && windows.size() > opt.max_windows) {
    // Evenly spaced windows over the whole test split.
    std::vector<data::SeriesWindow> picked;
    for (std::size_t i = 0; i < opt.max_windows; ++i) picked.push_back(windows[i * windows.size() / opt.max_windows]);
    windows = std::move(picked);
  }
  return evaluate_windows(cfg, checkpoint.ema, windows, eval_masks(cfg, opt, windows.size()), opt.seed);
}

namespace {

struct Variant {
  std::string name;
  run::RunConfig cfg;
  bool row = true;  // false: baseline for rho_emp only
};

std::vector<Variant> ablation_grid(const run::RunConfig& base, std::string_view axis) {
  std::vector<Variant> grid;
  run::RunConfig vanilla = base;
  vanilla.mode = run::Mode::dp_vanilla;
  vanilla.bounds_active = run::BoundsActive::automatic;
  run::RunConfig aware = base;
  aware.mode = run::Mode::dp_aware;
  aware.bounds_active = run::BoundsActive::automatic;

  if (axis == "components") {
    grid.push_back({"DP-vanilla", vanilla});
    run::RunConfig c_only = aware, adaln_only = aware;
    c_only.bounds.bound_condition = true;
    c_only.bounds.bound_modulation = false;
    adaln_only.bounds.bound_condition = false;
    adaln_only.bounds.bound_modulation = true;
    aware.bounds.bound_condition = aware.bounds.bound_modulation = true;
    grid.push_back({"DP-aware (only c-bounding)", c_only});
    grid.push_back({"DP-aware (only AdaLN bounding)", adaln_only});
    grid.push_back({"DP-aware (full)", aware});
  } else if (axis == "operator") {
    grid.push_back({"DP-vanilla", vanilla, false});
    for (auto op : {model::BoundOperator::tanh, model::BoundOperator::soft_clamp_band, model::BoundOperator::hard_clamp,
                    model::BoundOperator::clamp_ste}) {
      run::RunConfig c = aware;
      c.bounds.op = op;
      grid.push_back({std::string(model::to_string(op)), c});
    }
  } else if (axis == "tightness") {
    grid.push_back({"DP-vanilla", vanilla, false});
    const std::pair<const char*, double> levels[] = {{"Loose", 1.0}, {"Medium", 0.9}, {"Tight", 0.75}, {"Too tight", 0.5}};
    for (const auto& [name, scale] : levels) {
      run::RunConfig c = aware;
      c.tightness = scale;
      grid.push_back({fmt::format("{} ({:.2f})", name, scale), c});
    }
  } else if (axis == "clip_C") {
    for (double C : {0.5, 1.0, 2.0}) {
      run::RunConfig v = vanilla, a = aware;
      v.dp.clip_C = a.dp.clip_C = C;
      grid.push_back({fmt::format("DP-vanilla C={}", C), v});
      grid.push_back({fmt::format("DP-aware C={}", C), a});
    }
  } else {
    throw Error(fmt::format("unknown ablation axis '{}' (expected components, operator, tightness or clip_C)", axis));
  }
  return grid;
}

}  // namespace

std::vector<AblationRow> cmd_ablate(const run::RunConfig& base, std::string_view axis, std::size_t eval_windows) {
  const auto grid = ablation_grid(base, axis);
  base.validate();
  const train::Dataset data = train::load_dataset(base);
  std::vector<data::SeriesWindow> windows;
  for (std::size_t i = 0; i < eval_windows && !data.test.empty(); ++i) {
    windows.push_back(data.test[i * data.test.size() / eval_windows]);
  }
  EvalOptions eo;
  eo.task = Task::forecasting;

  std::vector<AblationRow> rows;
  double vanilla_p99 = 0.0;
  for (const auto& v : grid) {
    const auto r = train::train(v.cfg, data);
    const double p99_total = diag::TailSummary::from(r.log).total.p99;
    // The clip_C grid alternates vanilla/aware pairs; other axes start with the vanilla run.
    if (v.cfg.mode == run::Mode::dp_vanilla) vanilla_p99 = p99_total;
    if (!v.row) continue;
    AblationRow row;
    row.variant = v.name;
    row.config = v.cfg;
    row.rho_emp = vanilla_p99 > 0.0 ? p99_total / vanilla_p99 : 1.0;
    row.final_loss = r.final_loss();
    if (!windows.empty()) {
      row.forecast = evaluate_windows(v.cfg, r.optim.ema, windows, eval_masks(v.cfg, eo, windows.size()), eo.seed);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_ablation_table(std::string_view axis, const std::vector<AblationRow>& rows) {
  std::string s = fmt::format("# axis = {}; rho_emp at p99 of the total norm against the matched DP-vanilla run\n", axis);
  s += fmt::format("{:<34} {:>6} {:>6} {:>8} {:>8} {:>11} {:>11} {:>11}\n", "variant", "c_bd", "mod_bd", "scale",
                   "rho_emp", "final_loss", "point_RMSE", "dist_JS");
  for (const auto& r : rows) {
    const bool on = r.config.bounds_enabled();
    s += fmt::format("{:<34} {:>6} {:>6} {:>8.2f} {:>8.3f} {:>11.5f} {:>11.5f} {:>11.5f}\n", r.variant,
                     on && r.config.bounds.bound_condition ? "yes" : "no",
                     on && r.config.bounds.bound_modulation ? "yes" : "no", r.config.tightness, r.rho_emp,
                     r.final_loss, r.forecast.point.rmse, r.forecast.js);
  }
  return s;
}

sens::BoundReport cmd_bounds(const run::RunConfig& cfg, std::size_t calibration_steps) {
  cfg.validate();
  run::RunConfig calib = cfg;
  calib.mode = run::Mode::non_dp;
  calib.bounds_active = run::BoundsActive::off;
  calib.steps = calibration_steps;
  calib.val_every = std::max<std::size_t>(1, calibration_steps);
  const train::Dataset data = train::load_dataset(calib);
  train::TrainOptions opt;
  opt.record_groups = true;
  const auto r = train::train(calib, data, opt);
  const double C = std::isfinite(cfg.dp.clip_C) ? cfg.dp.clip_C : 1.0;
  return sens::make_bound_report(constants_from_groups(r.groups), cfg.bounds.scaled(cfg.tightness),
                                 references_from_run(r), C);
}

}  // namespace dpadaln::cmd
