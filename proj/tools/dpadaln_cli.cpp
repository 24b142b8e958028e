#include <CLI11.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "dpadaln/atomic_io.hpp"
#include "dpadaln/commands.hpp"

using namespace dpadaln;

namespace {

struct ConfigFlags {
  std::string profile = "desk";
  std::string file;
  std::vector<std::string> sets;

  void attach(CLI::App* app) {
    app->add_option("--profile", profile, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
    app->add_option("--config", file, "config file (key = value with [section] headers)");
    app->add_option("--set", sets, "override, e.g. --set dp.noise_sigma=0.05 (repeatable)");
  }

  run::RunConfig resolve() const {
    run::RunConfig cfg = file.empty() ? run::RunConfig::for_profile(profile) : run::RunConfig::load(file);
    cfg.apply_overrides(sets);
    cfg.validate();
    return cfg;
  }
};

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ';');
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DP-aware AdaLN-Zero diffusion training and diagnostics"};
  app.require_subcommand(1);

  auto* train_cmd = app.add_subcommand("train", "train one run and write its artifacts");
  ConfigFlags train_cfg;
  train_cfg.attach(train_cmd);
  std::string train_out = "run";
  bool quiet = false;
  train_cmd->add_option("--out", train_out, "output directory");
  train_cmd->add_flag("--quiet", quiet, "no progress lines");

  auto* diag_cmd = app.add_subcommand("diagnose", "compare a DP-vanilla and a DP-aware gradient log");
  std::string log_vanilla, log_aware, diag_out;
  double diag_C = 1.0;
  diag_cmd->add_option("--vanilla", log_vanilla, "gradient log of the DP-vanilla run")->required();
  diag_cmd->add_option("--aware", log_aware, "gradient log of the DP-aware run")->required();
  diag_cmd->add_option("--C", diag_C, "clipping threshold of both runs");
  diag_cmd->add_option("--out", diag_out, "directory for the report and ECDF/CCDF files");

  auto* eval_cmd = app.add_subcommand("evaluate", "conditional sampling on test windows");
  std::string ckpt_path, eval_config, eval_out, task = "forecasting";
  std::vector<std::string> eval_sets;
  cmd::EvalOptions eval_opt;
  eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  eval_cmd->add_option("--config", eval_config, "data configuration (defaults to the checkpoint's)");
  eval_cmd->add_option("--set", eval_sets, "override on the data configuration");
  eval_cmd->add_option("--task", task, "interpolation or forecasting");
  eval_cmd->add_option("--windows", eval_opt.max_windows, "maximum number of test windows (0 = all)");
  eval_cmd->add_option("--seed", eval_opt.seed, "sampling seed");
  eval_cmd->add_option("--pred-len", eval_opt.pred_len, "forecast horizon");
  eval_cmd->add_option("--out", eval_out, "report file (a .csv sibling is written too)");

  auto* ablate_cmd = app.add_subcommand("ablate", "matched comparison grid along one axis");
  ConfigFlags ablate_cfg;
  ablate_cfg.attach(ablate_cmd);
  std::string axis, ablate_out;
  std::size_t ablate_windows = 16;
  ablate_cmd->add_option("--axis", axis, "components, operator, tightness or clip_C")->required();
  ablate_cmd->add_option("--windows", ablate_windows, "forecast windows per row");
  ablate_cmd->add_option("--out", ablate_out, "table file");

  auto* bounds_cmd = app.add_subcommand("bounds", "sensitivity bound report from a calibration run");
  ConfigFlags bounds_cfg;
  bounds_cfg.attach(bounds_cmd);
  std::size_t calib_steps = 500;
  std::string bounds_out;
  bounds_cmd->add_option("--calibration-steps", calib_steps, "non-private calibration steps");
  bounds_cmd->add_option("--out", bounds_out, "report file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      const auto cfg = train_cfg.resolve();
      train::TrainOptions opt;
      if (!quiet) {
        const std::size_t every = std::max<std::size_t>(1, cfg.steps / 20);
        opt.progress = [every, total = cfg.steps](std::uint64_t step, double loss) {
          if (step % every == 0 || step == total) std::fprintf(stderr, "step %llu/%zu loss %.6f\n",
                                                               static_cast<unsigned long long>(step), total, loss);
        };
      }
      const auto out = cmd::cmd_train(cfg, train_out, opt);
      fmt::print("checkpoint {}\ngrad_log {}\nreport {}\nbounds {}\n", out.paths.checkpoint, out.paths.grad_log,
                 out.paths.report, out.paths.bound_report);
    } else if (*diag_cmd) {
      const auto report = cmd::cmd_diagnose(diag::GradientLog::read_csv(log_vanilla),
                                            diag::GradientLog::read_csv(log_aware), diag_C, diag_out);
      fmt::print("{}", report);
    } else if (*eval_cmd) {
      eval_opt.task = cmd::parse_task(task);
      const auto ck = ckpt::Checkpoint::load(ckpt_path);
      run::RunConfig data_cfg = eval_config.empty() ? ck.config : run::RunConfig::load(eval_config);
      data_cfg.apply_overrides(eval_sets);
      const auto report = cmd::cmd_evaluate(ck, data_cfg, eval_opt);
      const std::string text = fmt::format("# task = {}\n", cmd::to_string(eval_opt.task)) + report.to_text();
      if (!eval_out.empty()) {
        io::write_file_atomic(eval_out, text);
        io::write_file_atomic(std::filesystem::path(eval_out).replace_extension(".csv").string(),
                              metrics::MetricReport::csv_header() + "\n" + report.csv_row() + "\n");
      }
      fmt::print("{}", text);
    } else if (*ablate_cmd) {
      const auto rows = cmd::cmd_ablate(ablate_cfg.resolve(), axis, ablate_windows);
      const auto table = cmd::format_ablation_table(axis, rows);
      if (!ablate_out.empty()) io::write_file_atomic(ablate_out, table);
      fmt::print("{}", table);
    } else if (*bounds_cmd) {
      const auto text = sens::format_bound_report(cmd::cmd_bounds(bounds_cfg.resolve(), calib_steps));
      if (!bounds_out.empty()) io::write_file_atomic(bounds_out, text);
      fmt::print("{}", text);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", one_line(e.what()).c_str());
    return 1;
  }
  return 0;
}
