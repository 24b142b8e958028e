#include "dpadaln/diffusion.hpp"

#include <cmath>

namespace dpadaln::diffusion {

DiffusionSchedule build_schedule(std::size_t T, double beta_start, double beta_end) {
  if (T < 1) throw Error("build_schedule: T must be at least 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw Error("build_schedule: need 0 < beta_start <= beta_end < 1");
  }
  DiffusionSchedule s;
  s.T = T;
  s.beta.resize(T);
  s.alpha_bar.resize(T);
  double prod = 1.0;
  for (std::size_t t = 0; t < T; ++t) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(T - 1);
    s.beta[t] = beta_start + (beta_end - beta_start) * frac;
    prod *= 1.0 - s.beta[t];
    s.alpha_bar[t] = prod;
  }
  return s;
}

Tensor q_sample(const Tensor& x0, std::size_t t, const Tensor& eps, const DiffusionSchedule& sched) {
  if (t >= sched.T) {
    throw Error("q_sample: timestep " + std::to_string(t) + " out of range [0, " + std::to_string(sched.T) + ")");
  }
  if (!x0.same_shape(eps)) throw Error("q_sample: eps " + eps.shape_str() + " differs from x0 " + x0.shape_str());
  const double a = std::sqrt(sched.alpha_bar[t]), b = std::sqrt(1.0 - sched.alpha_bar[t]);
  Tensor out = x0;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

Tensor masked_input(const Tensor& x0, const Tensor& x_t, const data::MaskSpec& mask) {
  if (!x0.same_shape(x_t)) throw Error("masked_input: shape mismatch");
  if (mask.length() != x0.rows()) throw Error("masked_input: mask length differs from window length");
  Tensor out = x0;
  const std::size_t K = x0.cols();
  for (std::size_t i = 0; i < mask.length(); ++i) {
    if (mask.bits[i]) continue;
    for (std::size_t k = 0; k < K; ++k) out(i, k) = x_t(i, k);
  }
  return out;
}

Tensor condition_for(const model::DenoiserModel& model, const Tensor& x0, const data::MaskSpec& mask, std::size_t t) {
  return model::condition_features(x0, mask.bits, t, model.config().time_embed_dim);
}

ad::Var training_loss(ad::Tape& tape, const model::DenoiserModel& model, const ParamSet& params, const Tensor& x0,
                      const data::MaskSpec& mask, const Tensor& cond, std::size_t t, const Tensor& eps,
                      const DiffusionSchedule& sched, model::ConditionTrace* trace) {
  if (mask.masked_count() == 0) throw Error("training_loss: mask has no masked positions");
  const Tensor x_in = masked_input(x0, q_sample(x0, t, eps, sched), mask);
  ad::Var pred = model.forward(tape, params, x_in, mask.bits, cond, trace);
  return ad::masked_mse(pred, tape.constant(eps), mask.masked_weights());
}

Tensor sample_conditional(const model::DenoiserModel& model, const ParamSet& params, const Tensor& observed,
                          const data::MaskSpec& mask, const DiffusionSchedule& sched, CounterRng& rng) {
  const auto& cfg = model.config();
  if (observed.rows() != cfg.seq_len || observed.cols() != cfg.channels) {
    throw Error("sample_conditional: observed window " + observed.shape_str() + " does not match the model");
  }
  if (mask.length() != cfg.seq_len) throw Error("sample_conditional: mask length mismatch");
  if (mask.masked_count() == 0) return observed;

  const std::size_t L = cfg.seq_len, K = cfg.channels;
  Tensor x = observed;
  for (std::size_t i = 0; i < L; ++i) {
    if (mask.bits[i]) continue;
    for (std::size_t k = 0; k < K; ++k) x(i, k) = rng.normal();
  }
  for (std::size_t step = sched.T; step-- > 0;) {
    const Tensor cond = condition_for(model, observed, mask, step);
    const Tensor eps_hat = model.predict(params, x, mask.bits, cond);
    const double beta = sched.beta[step];
    const double coef = beta / std::sqrt(1.0 - sched.alpha_bar[step]);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(1.0 - beta);
    const double sigma = step > 0 ? std::sqrt(beta) : 0.0;
    for (std::size_t i = 0; i < L; ++i) {
      if (mask.bits[i]) continue;
      for (std::size_t k = 0; k < K; ++k) {
        double v = (x(i, k) - coef * eps_hat(i, k)) * inv_sqrt_alpha;
        if (step > 0) v += sigma * rng.normal();
        x(i, k) = v;
      }
    }
  }
  if (!x.all_finite()) throw Error("sample_conditional: non-finite sample");
  return x;
}

}  // namespace dpadaln::diffusion
