#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dpadaln/data.hpp"
#include "dpadaln/diagnostics.hpp"
#include "dpadaln/dp_optimizer.hpp"
#include "dpadaln/model.hpp"
#include "dpadaln/rng.hpp"
#include "dpadaln/run_config.hpp"

namespace dpadaln::train {

struct Dataset {
  data::NormStats norm;
  std::vector<data::SeriesWindow> train;
  std::vector<data::SeriesWindow> val;
  std::vector<data::SeriesWindow> test;
};

/// Synthetic or CSV series, split, standardized with training statistics, windowed.
Dataset load_dataset(const run::RunConfig& cfg);

/// One training example: clean window, mask, diffusion step and noise.
struct Example {
  Tensor x0;
  data::MaskSpec mask;
  std::size_t t = 0;
  Tensor eps;
};

data::MaskSpec sample_mask(const run::MaskMix& mix, std::size_t L, CounterRng& rng);
Example sample_example(const std::vector<data::SeriesWindow>& windows, const run::RunConfig& cfg, CounterRng& data_rng,
                       CounterRng& diffusion_rng);

/// Positions of the independent random streams after a step.
struct StreamPositions {
  CounterRng::Position data;
  CounterRng::Position diffusion;
  CounterRng::Position noise;
  bool operator==(const StreamPositions&) const = default;
};

/// Per-example gradient norms by group, used to estimate bound constants.
struct GroupNorms {
  double mod_bias = 0.0;  // sum over blocks of ||grad mod.b|| (= ||dl/d raw modulation||)
  double f_net = 0.0;     // attention + MLP weights
  double rest = 0.0;      // everything except modulation weights and F
  double alpha_abs = 0.0; // max |alpha| over blocks
};

struct ValRecord {
  std::uint64_t step = 0;
  double loss = 0.0;
};

struct TrainResult {
  ParamSet params;
  dp::OptimState optim;
  diag::GradientLog log;
  std::vector<double> step_loss;
  std::vector<StreamPositions> streams;
  std::vector<ValRecord> val;
  /// Per-example condition magnitudes (before projection / after bounding).
  std::vector<double> cond_norm;
  std::vector<double> gamma_abs;
  std::vector<double> beta_abs;
  std::vector<double> alpha_abs;
  std::vector<GroupNorms> groups;

  /// Mean training loss over the last 10% of steps.
  double final_loss() const;
};

struct TrainOptions {
  bool record_groups = false;
  std::function<void(std::uint64_t step, double loss)> progress;
};

TrainResult train(const run::RunConfig& cfg, const Dataset& data, const TrainOptions& options = {});

/// Plain-text run summary (configuration digest, losses, tails, clipping).
std::string format_report(const run::RunConfig& cfg, const TrainResult& r);

}  // namespace dpadaln::train
