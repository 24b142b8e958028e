#include "dpadaln/dp_optimizer.hpp"

#include <cmath>
#include <limits>

namespace dpadaln::dp {

void DPConfig::validate() const {
  if (!(clip_C > 0.0)) throw Error("DPConfig: clip_C must be positive");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw Error("DPConfig: noise_sigma must be finite and >= 0");
  if (std::isinf(clip_C) && noise_sigma > 0.0) throw Error("DPConfig: noise requires a finite clip_C");
  if (batch_B < 1) throw Error("DPConfig: batch_B must be at least 1");
}

ClipResult clip_gradient(const GradientVector& g, double C) {
  if (!(C > 0.0)) throw Error("clip_gradient: C must be positive");
  ClipResult r{g, 1.0, g.norm()};
  if (r.norm > C) {
    r.eta = C / r.norm;
    r.clipped.scale(r.eta);
  }
  return r;
}

namespace {

// Neumaier-compensated running sum of flattened vectors.
struct CompensatedSum {
  std::vector<double> sum, comp;

  explicit CompensatedSum(std::size_t n) : sum(n, 0.0), comp(n, 0.0) {}

  void add(const GradientVector& g, double factor) {
    std::size_t i = 0;
    for (const auto& e : g.entries()) {
      for (double x : e.value.data) {
        const double v = factor * x;
        const double t = sum[i] + v;
        if (std::abs(sum[i]) >= std::abs(v)) {
          comp[i] += (sum[i] - t) + v;
        } else {
          comp[i] += (v - t) + sum[i];
        }
        sum[i] = t;
        ++i;
      }
    }
  }

  std::vector<double> result() const {
    std::vector<double> out(sum.size());
    for (std::size_t i = 0; i < sum.size(); ++i) out[i] = sum[i] + comp[i];
    return out;
  }
};

std::vector<double> clipped_sum(const std::vector<GradientVector>& grads, double C, std::vector<ClipRecord>* clips) {
  const GradientVector& first = grads.front();
  CompensatedSum acc(first.dimension());
  if (clips) clips->clear();
  for (const auto& g : grads) {
    if (!g.same_layout(first)) throw Error("privatize_batch: per-example gradients differ in layout");
    const double norm = g.norm();
    const double eta = norm > C ? C / norm : 1.0;
    acc.add(g, eta);
    if (clips) clips->push_back({eta, norm});
  }
  return acc.result();
}

}  // namespace

GradientVector privatize_batch(const std::vector<GradientVector>& grads, const DPConfig& cfg, CounterRng& rng,
                               std::vector<ClipRecord>* clips) {
  cfg.validate();
  if (grads.empty()) throw Error("privatize_batch: empty batch");
  std::vector<double> total = clipped_sum(grads, cfg.clip_C, clips);
  if (cfg.noise_sigma > 0.0) {
    const double sd = cfg.noise_sigma * cfg.clip_C;
    for (double& v : total) v += sd * rng.normal();
  }
  const double inv_b = 1.0 / static_cast<double>(grads.size());
  for (double& v : total) v *= inv_b;
  GradientVector out = grads.front().zeros_like();
  out.unflatten(total);
  return out;
}

double sensitivity_probe(const std::vector<GradientVector>& batch_d, const std::vector<GradientVector>& batch_d_prime,
                         const DPConfig& cfg) {
  cfg.validate();
  if (batch_d.empty() || batch_d.size() != batch_d_prime.size()) {
    throw Error("sensitivity_probe: batches must be non-empty and of equal size");
  }
  std::size_t differing = 0;
  for (std::size_t i = 0; i < batch_d.size(); ++i) differing += !(batch_d[i] == batch_d_prime[i]);
  if (differing > 1) {
    throw Error("sensitivity_probe: batches differ in " + std::to_string(differing) + " examples (expected at most 1)");
  }
  const auto a = clipped_sum(batch_d, cfg.clip_C, nullptr);
  const auto b = clipped_sum(batch_d_prime, cfg.clip_C, nullptr);
  const double inv_b = 1.0 / static_cast<double>(batch_d.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = (a[i] - b[i]) * inv_b;
    s += d * d;
  }
  return std::sqrt(s);
}

void OptimizerSettings::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw Error("optimizer: lr must be positive");
  if (!(weight_decay >= 0.0)) throw Error("optimizer: weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw Error("optimizer: betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw Error("optimizer: eps must be positive");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw Error("optimizer: ema_decay must lie in [0, 1)");
}

double OptimizerSettings::lr_at(std::uint64_t step) const {
  if (warmup_steps == 0 || step >= warmup_steps) return lr;
  return lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
}

OptimState OptimState::init(const ParamSet& params, OptimizerSettings settings) {
  settings.validate();
  OptimState s;
  s.settings = settings;
  s.m = params.zeros_like<GradTag>();
  s.v = params.zeros_like<GradTag>();
  s.ema = params;
  return s;
}

void optimizer_step(ParamSet& params, const GradientVector& update, OptimState& state) {
  const auto& o = state.settings;
  if (!params.same_layout(update) || !params.same_layout(state.m) || !params.same_layout(state.ema)) {
    throw Error("optimizer_step: layout mismatch between parameters, update and state");
  }
  if (!update.all_finite()) throw Error("optimizer_step: non-finite update rejected");

  const std::uint64_t t = state.step + 1;
  const double lr = o.lr_at(t);
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(t));

  ParamSet next = params;
  GradientVector m = state.m, v = state.v;
  for (std::size_t e = 0; e < next.entries().size(); ++e) {
    auto& p = next.entries()[e].value.data;
    auto& me = m.entries()[e].value.data;
    auto& ve = v.entries()[e].value.data;
    const auto& g = update.entries()[e].value.data;
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] *= 1.0 - lr * o.weight_decay;
      me[i] = o.beta1 * me[i] + (1.0 - o.beta1) * g[i];
      ve[i] = o.beta2 * ve[i] + (1.0 - o.beta2) * g[i] * g[i];
      const double mhat = me[i] / bc1, vhat = ve[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + o.eps);
    }
  }
  if (!next.all_finite()) throw Error("optimizer_step: update produced non-finite parameters");

  ParamSet ema = state.ema;
  for (std::size_t e = 0; e < ema.entries().size(); ++e) {
    auto& s = ema.entries()[e].value.data;
    const auto& p = next.entries()[e].value.data;
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = o.ema_decay * s[i] + (1.0 - o.ema_decay) * p[i];
  }
  params = std::move(next);
  state.m = std::move(m);
  state.v = std::move(v);
  state.ema = std::move(ema);
  state.step = t;
}

}  // namespace dpadaln::dp
