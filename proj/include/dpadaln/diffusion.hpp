#pragma once

#include <vector>

#include "dpadaln/autodiff.hpp"
#include "dpadaln/data.hpp"
#include "dpadaln/model.hpp"
#include "dpadaln/rng.hpp"

namespace dpadaln::diffusion {

/// Linear beta schedule; index t runs over 0 .. T-1.
struct DiffusionSchedule {
  std::size_t T = 0;
  std::vector<double> beta;
  std::vector<double> alpha_bar;
};

DiffusionSchedule build_schedule(std::size_t T, double beta_start = 1e-4, double beta_end = 0.02);

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
Tensor q_sample(const Tensor& x0, std::size_t t, const Tensor& eps, const DiffusionSchedule& sched);

/// Model input: x0 on observed steps, x_t on masked ones.
Tensor masked_input(const Tensor& x0, const Tensor& x_t, const data::MaskSpec& mask);

/// Condition features for a window: observed-entry statistics plus the
/// embedding of timestep t.
Tensor condition_for(const model::DenoiserModel& model, const Tensor& x0, const data::MaskSpec& mask, std::size_t t);

/// Masked noise-prediction loss: mean squared error between the predicted
/// noise and eps over masked positions only.
ad::Var training_loss(ad::Tape& tape, const model::DenoiserModel& model, const ParamSet& params, const Tensor& x0,
                      const data::MaskSpec& mask, const Tensor& cond, std::size_t t, const Tensor& eps,
                      const DiffusionSchedule& sched, model::ConditionTrace* trace = nullptr);

/// Ancestral DDPM sampling of the masked steps (reverse variance beta_t);
/// observed steps are reset to `observed` after every update.
Tensor sample_conditional(const model::DenoiserModel& model, const ParamSet& params, const Tensor& observed,
                          const data::MaskSpec& mask, const DiffusionSchedule& sched, CounterRng& rng);

}  // namespace dpadaln::diffusion
