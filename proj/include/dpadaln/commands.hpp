#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dpadaln/checkpoint.hpp"
#include "dpadaln/diagnostics.hpp"
#include "dpadaln/metrics.hpp"
#include "dpadaln/run_config.hpp"
#include "dpadaln/sensitivity.hpp"
#include "dpadaln/trainer.hpp"

namespace dpadaln::cmd {

struct RunArtifacts {
  std::string config;
  std::string checkpoint;
  std::string grad_log;
  std::string report;
  std::string bound_report;
};

struct TrainOutcome {
  RunArtifacts paths;
  train::TrainResult result;
};

/// Trains one run and writes config.ini, checkpoint.txt, grad_log.csv,
/// report.txt and bounds.txt into out_dir.
TrainOutcome cmd_train(const run::RunConfig& cfg, const std::string& out_dir, const train::TrainOptions& options = {});

/// Bound constants estimated from per-example group norms (sup times margin).
sens::ArchConstants constants_from_groups(const std::vector<train::GroupNorms>& groups, double margin = 1.1);
/// p99 of the observed condition norm and modulation magnitudes.
sens::ReferenceMagnitudes references_from_run(const train::TrainResult& r);

/// Tail-quantile and clipping tables comparing two logs; writes the report and
/// ECDF/CCDF files into out_dir when it is non-empty. Refuses logs whose
/// clipping factors were produced under a different C.
std::string cmd_diagnose(const diag::GradientLog& vanilla, const diag::GradientLog& aware, double C,
                         const std::string& out_dir = "");

enum class Task { interpolation, forecasting };
Task parse_task(std::string_view s);
std::string_view to_string(Task t);

struct EvalOptions {
  Task task = Task::forecasting;
  std::size_t max_windows = 32;
  std::uint64_t seed = 11;
  /// Forecast horizon; 0 means the largest pred_len of the mask mix.
  std::size_t pred_len = 0;
};

/// Masks used for evaluation: block masks for forecasting, alternating
/// random and stride masks for interpolation.
std::vector<data::MaskSpec> eval_masks(const run::RunConfig& cfg, const EvalOptions& opt, std::size_t count);

/// Samples every window conditionally (EMA parameters) and scores the masked positions.
metrics::MetricReport evaluate_windows(const run::RunConfig& cfg, const ParamSet& params,
                                       const std::vector<data::SeriesWindow>& windows,
                                       const std::vector<data::MaskSpec>& masks, std::uint64_t seed);

/// Evaluates a checkpoint on the test windows of `data_cfg` (defaults to the
/// checkpoint's own configuration). The model sections must agree.
metrics::MetricReport cmd_evaluate(const ckpt::Checkpoint& checkpoint, const run::RunConfig& data_cfg,
                                   const EvalOptions& opt);

struct AblationRow {
  std::string variant;
  run::RunConfig config;
  double rho_emp = 1.0;  // p99 total norm relative to the matched DP-vanilla run
  double final_loss = 0.0;
  metrics::MetricReport forecast;
};

/// Runs the matched grid for one axis: components, operator, tightness or clip_C.
std::vector<AblationRow> cmd_ablate(const run::RunConfig& base, std::string_view axis, std::size_t eval_windows = 16);
std::string format_ablation_table(std::string_view axis, const std::vector<AblationRow>& rows);

/// Non-private calibration run, constants and references estimated from it,
/// then the sensitivity report for the configured bounds and C.
sens::BoundReport cmd_bounds(const run::RunConfig& cfg, std::size_t calibration_steps = 500);

}  // namespace dpadaln::cmd
