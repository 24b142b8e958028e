#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dpadaln/bounding.hpp"
#include "dpadaln/data.hpp"
#include "dpadaln/diffusion.hpp"
#include "dpadaln/dp_optimizer.hpp"
#include "dpadaln/model.hpp"

namespace dpadaln::run {

enum class Mode { non_dp, dp_vanilla, dp_aware };

std::string_view to_string(Mode m);
Mode parse_mode(std::string_view s);

/// Whether the forward-pass bounds are applied: `auto` enables them only in dp_aware mode.
enum class BoundsActive { automatic, on, off };

struct DataConfig {
  std::string source = "synthetic";  // synthetic | csv
  std::uint64_t seed = 2024;         // synthetic series only
  std::string csv_path;
  std::string split = "chrono";      // chrono | ett
  std::size_t rows_per_month = 720;
  std::size_t length = 12000;
  double rare_event_prob = 0.02;
  double rare_scale = 8.0;
  std::size_t window_stride = 1;
};

struct MaskMix {
  double random_weight = 1.0;
  double block_weight = 1.0;
  double stride_weight = 1.0;
  double ratio_min = 0.1;
  double ratio_max = 0.5;
  std::size_t pred_len_min = 6;
  std::size_t pred_len_max = 12;
  std::size_t blocks_min = 2;
  std::size_t blocks_max = 4;
};

struct RunConfig {
  std::string profile = "desk";
  Mode mode = Mode::dp_aware;
  std::uint64_t seed = 7;
  std::size_t steps = 2000;
  std::size_t batch = 8;
  std::size_t log_stride = 1;
  std::size_t val_every = 50;
  std::size_t val_windows = 16;

  model::ModelConfig model;
  /// Base limits; the effective limits are base * tightness.
  model::BoundConfig bounds;
  double tightness = 0.9;
  BoundsActive bounds_active = BoundsActive::automatic;
  dp::DPConfig dp;
  dp::OptimizerSettings optim;
  std::size_t diffusion_steps = 50;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  DataConfig data;
  MaskMix masks;

  static RunConfig desk();
  static RunConfig paper();
  static RunConfig for_profile(std::string_view profile);

  /// Throws with the offending key names.
  void validate() const;

  bool bounds_enabled() const;
  /// Bounds handed to the model: scaled limits, or unbounded when disabled.
  model::BoundConfig effective_bounds() const;
  /// DP mechanism after the mode is applied (non_dp: C = inf, sigma = 0).
  dp::DPConfig effective_dp() const;
  diffusion::DiffusionSchedule schedule() const;

  /// Flat key = value text with [section] headers; parse(to_ini()) == *this.
  std::string to_ini() const;
  static RunConfig parse_ini(std::string_view text);
  static RunConfig load(const std::string& path);

  /// Applies "section.key=value" overrides on top of the current values.
  void apply_overrides(const std::vector<std::string>& assignments);
};

}  // namespace dpadaln::run
