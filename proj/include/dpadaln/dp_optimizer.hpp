#pragma once

#include <cstdint>
#include <vector>

#include "dpadaln/named_tensors.hpp"
#include "dpadaln/rng.hpp"

namespace dpadaln::dp {

struct DPConfig {
  double clip_C = 1.0;
  double noise_sigma = 0.0;
  std::size_t batch_B = 1;

  /// clip_C may be +inf (no clipping) only when noise_sigma is zero.
  void validate() const;
};

struct ClipResult {
  GradientVector clipped;
  double eta = 1.0;
  double norm = 0.0;
};

/// eta = min(1, C / ||g||) with eta = 1 for a zero gradient.
ClipResult clip_gradient(const GradientVector& g, double C);

struct ClipRecord {
  double eta = 1.0;
  double norm = 0.0;
};

/// (1/B) (sum_i clip(g_i, C) + z), z ~ N(0, sigma^2 C^2 I). The sum is
/// compensated (Neumaier); noise is drawn in flatten order and skipped when
/// sigma = 0.
GradientVector privatize_batch(const std::vector<GradientVector>& grads, const DPConfig& cfg, CounterRng& rng,
                               std::vector<ClipRecord>* clips = nullptr);

/// ||q(D) - q(D')|| for noiseless q. D and D' must have the same size and
/// differ in at most one position.
double sensitivity_probe(const std::vector<GradientVector>& batch_d, const std::vector<GradientVector>& batch_d_prime,
                         const DPConfig& cfg);

struct OptimizerSettings {
  double lr = 7e-4;
  double weight_decay = 2e-5;
  std::size_t warmup_steps = 1000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double ema_decay = 0.999;

  void validate() const;
  /// Learning rate used by step number `step` (1-based).
  double lr_at(std::uint64_t step) const;
};

struct OptimState {
  OptimizerSettings settings;
  GradientVector m;
  GradientVector v;
  ParamSet ema;
  std::uint64_t step = 0;

  static OptimState init(const ParamSet& params, OptimizerSettings settings);
};

/// AdamW with bias correction and decoupled weight decay, then EMA update.
/// A non-finite update (or result) throws and leaves params and state untouched.
void optimizer_step(ParamSet& params, const GradientVector& update, OptimState& state);

}  // namespace dpadaln::dp
