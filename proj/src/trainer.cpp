#include "dpadaln/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "dpadaln/diffusion.hpp"

namespace dpadaln::train {

namespace {

constexpr std::uint64_t kDataStream = 1;
constexpr std::uint64_t kDiffusionStream = 2;
constexpr std::uint64_t kNoiseStream = 3;
constexpr std::uint64_t kValStream = 4;

std::size_t uniform_int(CounterRng& rng, std::size_t lo, std::size_t hi) { return lo + rng.index(hi - lo + 1); }

}  // namespace

Dataset load_dataset(const run::RunConfig& cfg) {
  data::Series series;
  if (cfg.data.source == "csv") {
    series = data::read_csv(cfg.data.csv_path);
  } else {
    CounterRng rng(cfg.data.seed, /*stream=*/0xda7a);
    series = data::synth_series(cfg.data.length, cfg.model.channels, cfg.data.rare_event_prob, cfg.data.rare_scale, rng);
  }
  if (series.channels() != cfg.model.channels) {
    throw Error(fmt::format("data has {} channels but model.channels = {}", series.channels(), cfg.model.channels));
  }
  const data::Splits splits =
      cfg.data.split == "ett" ? data::ett_split(series, cfg.data.rows_per_month) : data::chronological_split(series);
  Dataset d;
  d.norm = data::NormStats::fit(splits.train);
  const std::size_t L = cfg.model.seq_len;
  d.train = data::window_dataset(d.norm.normalize(splits.train), L, cfg.data.window_stride);
  d.val = data::window_dataset(d.norm.normalize(splits.val), L, L);
  d.test = data::window_dataset(d.norm.normalize(splits.test), L, L);
  return d;
}

data::MaskSpec sample_mask(const run::MaskMix& mix, std::size_t L, CounterRng& rng) {
  const double total = mix.random_weight + mix.block_weight + mix.stride_weight;
  const double u = rng.uniform() * total;
  if (u < mix.random_weight) return data::random_mask(L, rng.uniform(mix.ratio_min, mix.ratio_max), rng);
  if (u < mix.random_weight + mix.block_weight) return data::block_mask(L, uniform_int(rng, mix.pred_len_min, mix.pred_len_max));
  return data::stride_mask(L, uniform_int(rng, mix.blocks_min, mix.blocks_max), rng);
}

Example sample_example(const std::vector<data::SeriesWindow>& windows, const run::RunConfig& cfg, CounterRng& data_rng,
                       CounterRng& diffusion_rng) {
  if (windows.empty()) throw Error("sample_example: no windows");
  Example e;
  e.x0 = windows[data_rng.index(windows.size())].values;
  e.mask = sample_mask(cfg.masks, cfg.model.seq_len, data_rng);
  e.t = diffusion_rng.index(cfg.diffusion_steps);
  e.eps = Tensor(e.x0.shape);
  for (double& v : e.eps.data) v = diffusion_rng.normal();
  return e;
}

double TrainResult::final_loss() const {
  if (step_loss.empty()) throw Error("final_loss: no steps recorded");
  const std::size_t n = std::max<std::size_t>(1, step_loss.size() / 10);
  double s = 0.0;
  for (std::size_t i = step_loss.size() - n; i < step_loss.size(); ++i) s += step_loss[i];
  return s / static_cast<double>(n);
}

TrainResult train(const run::RunConfig& cfg, const Dataset& data, const TrainOptions& options) {
  cfg.validate();
  const model::DenoiserModel net(cfg.model, cfg.effective_bounds());
  const dp::DPConfig dpc = cfg.effective_dp();
  const auto sched = cfg.schedule();

  TrainResult r;
  r.params = net.init_params(cfg.seed);
  r.optim = dp::OptimState::init(r.params, cfg.optim);

  // Which entries of the flattened gradient belong to which group.
  const auto part = net.partition();
  const auto& entries = r.params.entries();
  std::vector<bool> is_cond(entries.size());
  enum class Group { mod_weight, mod_bias, f_net, rest };
  std::vector<Group> group(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const std::string& id = entries[i].id;
    is_cond[i] = part.cond_ids.contains(id);
    if (id.ends_with(".mod.W")) group[i] = Group::mod_weight;
    else if (id.ends_with(".mod.b")) group[i] = Group::mod_bias;
    else if (id.find(".attn.") != std::string::npos || id.find(".mlp.") != std::string::npos) group[i] = Group::f_net;
    else group[i] = Group::rest;
  }

  CounterRng data_rng(cfg.seed, kDataStream), diffusion_rng(cfg.seed, kDiffusionStream),
      noise_rng(cfg.seed, kNoiseStream);

  std::vector<Example> val_set;
  {
    CounterRng vd(cfg.seed, kValStream), vt(cfg.seed, kValStream + 1);
    const auto& pool = data.val.empty() ? data.train : data.val;
    for (std::size_t i = 0; i < cfg.val_windows; ++i) val_set.push_back(sample_example(pool, cfg, vd, vt));
  }
  const auto val_loss = [&](const ParamSet& p) {
    double s = 0.0;
    for (const auto& e : val_set) {
      ad::Tape tape;
      const Tensor cond = diffusion::condition_for(net, e.x0, e.mask, e.t);
      s += diffusion::training_loss(tape, net, p, e.x0, e.mask, cond, e.t, e.eps, sched).value().item();
    }
    return val_set.empty() ? 0.0 : s / static_cast<double>(val_set.size());
  };

  std::vector<GradientVector> grads(cfg.batch);
  std::vector<dp::ClipRecord> clips;
  for (std::uint64_t step = 1; step <= cfg.steps; ++step) {
    double loss_sum = 0.0;
    std::vector<diag::GradLogRecord> pending;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const Example e = sample_example(data.train, cfg, data_rng, diffusion_rng);
      const Tensor cond = diffusion::condition_for(net, e.x0, e.mask, e.t);
      ad::Tape tape;
      model::ConditionTrace trace;
      ad::Var loss = diffusion::training_loss(tape, net, r.params, e.x0, e.mask, cond, e.t, e.eps, sched, &trace);
      tape.backward(loss);
      loss_sum += loss.value().item();
      grads[b] = tape.parameter_gradients();

      double cond_sq = 0.0, other_sq = 0.0, g_sq[4] = {0, 0, 0, 0}, mod_bias = 0.0;
      const auto& ge = grads[b].entries();
      for (std::size_t i = 0; i < ge.size(); ++i) {
        double s = 0.0;
        for (double v : ge[i].value.data) s += v * v;
        (is_cond[i] ? cond_sq : other_sq) += s;
        g_sq[static_cast<int>(group[i])] += s;
        if (group[i] == Group::mod_bias) mod_bias += std::sqrt(s);
      }
      const double max_of = [](const std::vector<double>& v) { return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end()); }(trace.alpha_abs);
      r.cond_norm.push_back(trace.cond_norm);
      r.gamma_abs.push_back(*std::max_element(trace.gamma_abs.begin(), trace.gamma_abs.end()));
      r.beta_abs.push_back(*std::max_element(trace.beta_abs.begin(), trace.beta_abs.end()));
      r.alpha_abs.push_back(max_of);
      if (options.record_groups) {
        r.groups.push_back({mod_bias, std::sqrt(g_sq[static_cast<int>(Group::f_net)]),
                            std::sqrt(g_sq[static_cast<int>(Group::mod_bias)] + g_sq[static_cast<int>(Group::rest)]),
                            max_of});
      }
      diag::GradLogRecord rec;
      rec.step = step;
      rec.cond_norm = std::sqrt(cond_sq);
      rec.other_norm = std::sqrt(other_sq);
      rec.total_norm = std::sqrt(cond_sq + other_sq);
      pending.push_back(rec);
    }
    const GradientVector update = dp::privatize_batch(grads, dpc, noise_rng, &clips);
    for (std::size_t b = 0; b < pending.size(); ++b) {
      pending[b].eta = clips[b].eta;
      if ((step - 1) % cfg.log_stride == 0) r.log.append(pending[b]);
    }
    dp::optimizer_step(r.params, update, r.optim);
    const double step_loss = loss_sum / static_cast<double>(cfg.batch);
    r.step_loss.push_back(step_loss);
    r.streams.push_back({data_rng.position(), diffusion_rng.position(), noise_rng.position()});
    if (step % cfg.val_every == 0 || step == cfg.steps) r.val.push_back({step, val_loss(r.optim.ema)});
    if (options.progress) options.progress(step, step_loss);
  }
  return r;
}

std::string format_report(const run::RunConfig& cfg, const TrainResult& r) {
  std::string s = "[run]\n";
  s += fmt::format("profile = {}\nmode = {}\nseed = {}\nsteps = {}\nbatch = {}\n", cfg.profile, run::to_string(cfg.mode),
                   cfg.seed, cfg.steps, cfg.batch);
  const auto b = cfg.effective_bounds();
  s += fmt::format("bounds_enabled = {}\nc_max = {}\ngamma_max = {}\nbeta_max = {}\nalpha_max = {}\n",
                   cfg.bounds_enabled(), b.c_max, b.gamma_max, b.beta_max, b.alpha_max);
  const auto d = cfg.effective_dp();
  s += fmt::format("clip_C = {}\nnoise_sigma = {}\n", d.clip_C, d.noise_sigma);
  s += "[loss]\n";
  s += fmt::format("final_loss = {:.17g}\n", r.final_loss());
  for (const auto& v : r.val) s += fmt::format("val_loss_step_{} = {:.17g}\n", v.step, v.loss);
  if (!r.log.empty()) {
    const auto tails = diag::TailSummary::from(r.log);
    s += "[tails]\n";
    for (auto p : {diag::Partition::total, diag::Partition::cond, diag::Partition::other}) {
      const auto& q = tails.of(p);
      s += fmt::format("{}_p50 = {:.17g}\n{}_p90 = {:.17g}\n{}_p95 = {:.17g}\n{}_p99 = {:.17g}\n", to_string(p), q.p50,
                       to_string(p), q.p90, to_string(p), q.p95, to_string(p), q.p99);
    }
    if (std::isfinite(d.clip_C)) {
      const auto c = diag::clip_stats(r.log.records(), d.clip_C);
      s += "[clipping]\n";
      s += fmt::format("p_clip = {:.17g}\nmean_eta = {:.17g}\neta10 = {:.17g}\neta50 = {:.17g}\neta90 = {:.17g}\n",
                       c.p_clip, c.mean_eta, c.eta10, c.eta50, c.eta90);
    }
  }
  return s;
}

}  // namespace dpadaln::train
