#include "dpadaln/model.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "dpadaln/rng.hpp"

namespace dpadaln::model {

void ModelConfig::validate() const {
  if (depth < 1) throw Error("ModelConfig: depth must be >= 1");
  if (hidden == 0 || heads == 0 || hidden % heads != 0) {
    throw Error("ModelConfig: hidden must be a positive multiple of heads");
  }
  if (seq_len < 2) throw Error("ModelConfig: seq_len must be >= 2");
  if (channels == 0) throw Error("ModelConfig: channels must be >= 1");
  if (cond_dim == 0) throw Error("ModelConfig: cond_dim must be >= 1");
  if (mlp_ratio == 0) throw Error("ModelConfig: mlp_ratio must be >= 1");
  if (time_embed_dim == 0 || time_embed_dim % 2 != 0) {
    throw Error("ModelConfig: time_embed_dim must be a positive even number");
  }
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.depth = 8;
  c.hidden = 256;
  c.heads = 8;
  c.seq_len = 168;
  c.channels = 7;
  c.cond_dim = 64;
  c.mlp_ratio = 4;
  c.time_embed_dim = 32;
  return c;
}

PartitionedGradient partition_gradient(const GradientVector& g, const ParamPartition& part) {
  PartitionedGradient out;
  for (const auto& e : g.entries()) {
    if (part.cond_ids.contains(e.id)) {
      out.cond.add(e.id, e.value);
    } else if (part.other_ids.contains(e.id)) {
      out.other.add(e.id, e.value);
    } else {
      throw Error("partition_gradient: identifier '" + e.id + "' is in neither partition");
    }
  }
  const double cs = out.cond.squared_norm();
  const double os = out.other.squared_norm();
  out.cond_norm = std::sqrt(cs);
  out.other_norm = std::sqrt(os);
  out.total_norm = std::sqrt(cs + os);
  return out;
}

ModulationParams modulation(const std::vector<double>& c_hat, const Tensor& weight, const Tensor& bias,
                            const BoundConfig& bounds) {
  const std::size_t k = c_hat.size();
  if (weight.rows() != k || weight.cols() % 3 != 0 || bias.size() != weight.cols()) {
    throw Error("modulation: weight " + weight.shape_str() + " / bias " + bias.shape_str() +
                " incompatible with condition of length " + std::to_string(k));
  }
  const std::size_t d = weight.cols() / 3;
  std::vector<double> raw(bias.data);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < 3 * d; ++j) raw[j] += c_hat[i] * weight(i, j);
  }
  ModulationParams out;
  const double limits[3] = {bounds.gamma_max, bounds.beta_max, bounds.alpha_max};
  std::vector<double>* dst[3] = {&out.gamma, &out.beta, &out.alpha};
  for (std::size_t part = 0; part < 3; ++part) {
    dst[part]->resize(d);
    for (std::size_t j = 0; j < d; ++j) {
      const double r = raw[part * d + j];
      (*dst[part])[j] = bounds.bound_modulation
                            ? bound_op(r, limits[part], bounds.op, bounds.band_for(limits[part]))
                            : r;
    }
  }
  return out;
}

ad::Var feed_forward(ad::Var v, const BlockWeights& w, std::size_t heads) {
  ad::Var q = ad::matmul(v, w.wq);
  ad::Var k = ad::matmul(v, w.wk);
  ad::Var val = ad::matmul(v, w.wv);
  ad::Var attn = ad::matmul(ad::multi_head_attention(q, k, val, heads), w.wo);
  ad::Var hidden = ad::tanh(ad::add_row(ad::matmul(ad::add(v, attn), w.w1), w.b1));
  ad::Var mlp = ad::add_row(ad::matmul(hidden, w.w2), w.b2);
  return ad::add(attn, mlp);
}

ad::Var adaln_block(ad::Var x, ad::Var gamma, ad::Var beta, ad::Var alpha, const BlockWeights& w,
                    std::size_t heads, BlockNodes* nodes) {
  ad::Var u = ad::layer_norm(x);
  ad::Var v = ad::add_row(ad::mul_row(u, gamma), beta);
  ad::Var h = feed_forward(v, w, heads);
  ad::Var y = ad::add(x, ad::mul_row(h, alpha));
  if (nodes) *nodes = BlockNodes{u, v, h, y};
  return y;
}

ModulationVars modulation_on_tape(ad::Var c_hat, ad::Var weight, ad::Var bias, std::size_t hidden,
                                  const BoundConfig& bounds) {
  ad::Var raw = ad::add_row(ad::matmul(c_hat, weight), bias);
  ad::Var g = ad::slice_cols(raw, 0, hidden);
  ad::Var b = ad::slice_cols(raw, hidden, 2 * hidden);
  ad::Var a = ad::slice_cols(raw, 2 * hidden, 3 * hidden);
  if (bounds.bound_modulation) {
    g = bound_on_tape(g, bounds.gamma_max, bounds.op, bounds.band_for(bounds.gamma_max));
    b = bound_on_tape(b, bounds.beta_max, bounds.op, bounds.band_for(bounds.beta_max));
    a = bound_on_tape(a, bounds.alpha_max, bounds.op, bounds.band_for(bounds.alpha_max));
  }
  return {g, b, a};
}

std::vector<double> timestep_embedding(std::size_t t, std::size_t dim) {
  const std::size_t half = dim / 2;
  std::vector<double> out(dim);
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    out[i] = std::sin(static_cast<double>(t) * freq);
    out[half + i] = std::cos(static_cast<double>(t) * freq);
  }
  return out;
}

Tensor condition_features(const Tensor& x0, const std::vector<std::uint8_t>& observed, std::size_t t,
                          std::size_t time_embed_dim) {
  const std::size_t L = x0.rows(), K = x0.cols();
  if (observed.size() != L) throw Error("condition_features: mask length differs from window length");
  std::size_t n_obs = 0;
  for (auto b : observed) n_obs += (b != 0);
  std::vector<double> f;
  f.reserve(1 + 2 * K + time_embed_dim);
  f.push_back(static_cast<double>(n_obs) / static_cast<double>(L));
  std::vector<double> mean(K, 0.0), sd(K, 0.0);
  if (n_obs > 0) {
    for (std::size_t i = 0; i < L; ++i) {
      if (!observed[i]) continue;
      for (std::size_t k = 0; k < K; ++k) mean[k] += x0(i, k);
    }
    for (double& m : mean) m /= static_cast<double>(n_obs);
    for (std::size_t i = 0; i < L; ++i) {
      if (!observed[i]) continue;
      for (std::size_t k = 0; k < K; ++k) sd[k] += (x0(i, k) - mean[k]) * (x0(i, k) - mean[k]);
    }
    for (double& s : sd) s = std::sqrt(s / static_cast<double>(n_obs));
  }
  f.insert(f.end(), mean.begin(), mean.end());
  f.insert(f.end(), sd.begin(), sd.end());
  const auto emb = timestep_embedding(t, time_embed_dim);
  f.insert(f.end(), emb.begin(), emb.end());
  const std::size_t n = f.size();
  return Tensor::matrix(1, n, std::move(f));
}

Tensor sinusoidal_positions(std::size_t length, std::size_t dim) {
  Tensor p({length, dim});
  for (std::size_t i = 0; i < length; ++i) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (j / 2)) / static_cast<double>(dim));
      p(i, j) = (j % 2 == 0) ? std::sin(static_cast<double>(i) * rate) : std::cos(static_cast<double>(i) * rate);
    }
  }
  return p;
}

DenoiserModel::DenoiserModel(ModelConfig config, BoundConfig bounds)
    : config_(config), bounds_(std::move(bounds)) {
  config_.validate();
  bounds_.validate();
  positional_ = sinusoidal_positions(config_.seq_len, config_.hidden);
}

namespace {

std::string block_id(std::size_t b, const char* name) { return "block" + std::to_string(b) + "." + name; }

Tensor gaussian_matrix(CounterRng& rng, std::size_t rows, std::size_t cols, double stddev) {
  Tensor t({rows, cols});
  for (double& v : t.data) v = stddev * rng.normal();
  return t;
}

}  // namespace

ParamSet DenoiserModel::init_params(std::uint64_t seed) const {
  const auto& c = config_;
  CounterRng rng(seed, /*stream=*/0x1417);
  const std::size_t d = c.hidden, md = c.hidden * c.mlp_ratio, k = c.cond_dim;
  const auto inv_sqrt = [](std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
  ParamSet p;
  p.add("embed.in.W", gaussian_matrix(rng, c.channels + 1, d, inv_sqrt(c.channels + 1)));
  p.add("embed.in.b", Tensor({d}, 0.0));
  p.add("cond.W", gaussian_matrix(rng, c.cond_features(), k, inv_sqrt(c.cond_features())));
  p.add("cond.b", Tensor({k}, 0.0));
  for (std::size_t b = 0; b < c.depth; ++b) {
    Tensor mod_w = gaussian_matrix(rng, k, 3 * d, inv_sqrt(k));
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 2 * d; j < 3 * d; ++j) mod_w(i, j) = 0.0;  // zero-initialized gate
    }
    Tensor mod_b({3 * d}, 0.0);
    for (std::size_t j = 0; j < d; ++j) mod_b[j] = 1.0;
    p.add(block_id(b, "mod.W"), std::move(mod_w));
    p.add(block_id(b, "mod.b"), std::move(mod_b));
    p.add(block_id(b, "attn.Wq"), gaussian_matrix(rng, d, d, inv_sqrt(d)));
    p.add(block_id(b, "attn.Wk"), gaussian_matrix(rng, d, d, inv_sqrt(d)));
    p.add(block_id(b, "attn.Wv"), gaussian_matrix(rng, d, d, inv_sqrt(d)));
    p.add(block_id(b, "attn.Wo"), gaussian_matrix(rng, d, d, inv_sqrt(d)));
    p.add(block_id(b, "mlp.W1"), gaussian_matrix(rng, d, md, inv_sqrt(d)));
    p.add(block_id(b, "mlp.b1"), Tensor({md}, 0.0));
    p.add(block_id(b, "mlp.W2"), gaussian_matrix(rng, md, d, inv_sqrt(md)));
    p.add(block_id(b, "mlp.b2"), Tensor({d}, 0.0));
  }
  p.add("head.W", gaussian_matrix(rng, d, c.channels, inv_sqrt(d)));
  p.add("head.b", Tensor({c.channels}, 0.0));
  return p;
}

ParamPartition DenoiserModel::partition() const {
  ParamPartition part;
  const ParamSet params = init_params(0);
  for (const auto& e : params.entries()) {
    const bool cond = e.id.starts_with("cond.") || e.id.find(".mod.") != std::string::npos;
    (cond ? part.cond_ids : part.other_ids).insert(e.id);
  }
  return part;
}

ad::Var DenoiserModel::forward(ad::Tape& tape, const ParamSet& params, const Tensor& x_in,
                               const std::vector<std::uint8_t>& observed, const Tensor& cond,
                               ConditionTrace* trace) const {
  const auto& c = config_;
  if (x_in.rows() != c.seq_len || x_in.cols() != c.channels) {
    throw Error("DenoiserModel::forward: input " + x_in.shape_str() + " expected (" +
                std::to_string(c.seq_len) + "x" + std::to_string(c.channels) + ")");
  }
  if (observed.size() != c.seq_len) throw Error("DenoiserModel::forward: mask length mismatch");
  if (cond.size() != c.cond_features()) {
    throw Error("DenoiserModel::forward: condition features " + cond.shape_str() + " expected " +
                std::to_string(c.cond_features()));
  }
  const std::vector<ad::Var> vars = tape.parameters(params);
  std::unordered_map<std::string_view, ad::Var> by_id;
  for (std::size_t i = 0; i < vars.size(); ++i) by_id.emplace(params.entries()[i].id, vars[i]);
  const auto get = [&](const std::string& id) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw Error("DenoiserModel::forward: missing parameter '" + id + "'");
    return it->second;
  };

  Tensor inp({c.seq_len, c.channels + 1});
  for (std::size_t i = 0; i < c.seq_len; ++i) {
    for (std::size_t k = 0; k < c.channels; ++k) inp(i, k) = x_in(i, k);
    inp(i, c.channels) = observed[i] ? 1.0 : 0.0;
  }
  ad::Var h = ad::add(ad::add_row(ad::matmul(tape.constant(std::move(inp)), get("embed.in.W")), get("embed.in.b")),
                      tape.constant(positional_));

  Tensor cond_row = cond;
  cond_row.shape = {1, cond.size()};
  ad::Var cvec = ad::add_row(ad::matmul(tape.constant(std::move(cond_row)), get("cond.W")), get("cond.b"));
  if (trace) {
    *trace = ConditionTrace{};
    trace->cond_norm = l2_norm(cvec.value());
  }
  if (bounds_.bound_condition && !std::isinf(bounds_.c_max)) cvec = ad::project_l2(cvec, bounds_.c_max);

  const auto max_abs = [](const Tensor& t) {
    double m = 0.0;
    for (double v : t.data) m = std::max(m, std::abs(v));
    return m;
  };
  for (std::size_t b = 0; b < c.depth; ++b) {
    ModulationVars mod = modulation_on_tape(cvec, get(block_id(b, "mod.W")), get(block_id(b, "mod.b")), c.hidden, bounds_);
    if (trace) {
      trace->gamma_abs.push_back(max_abs(mod.gamma.value()));
      trace->beta_abs.push_back(max_abs(mod.beta.value()));
      trace->alpha_abs.push_back(max_abs(mod.alpha.value()));
    }
    BlockWeights w{get(block_id(b, "attn.Wq")), get(block_id(b, "attn.Wk")), get(block_id(b, "attn.Wv")),
                   get(block_id(b, "attn.Wo")), get(block_id(b, "mlp.W1")),  get(block_id(b, "mlp.b1")),
                   get(block_id(b, "mlp.W2")),  get(block_id(b, "mlp.b2"))};
    h = adaln_block(h, mod.gamma, mod.beta, mod.alpha, w, c.heads);
  }
  return ad::add_row(ad::matmul(ad::layer_norm(h), get("head.W")), get("head.b"));
}

Tensor DenoiserModel::predict(const ParamSet& params, const Tensor& x_in, const std::vector<std::uint8_t>& observed,
                              const Tensor& cond) const {
  ad::Tape tape;
  return forward(tape, params, x_in, observed, cond).value();
}

}  // namespace dpadaln::model
