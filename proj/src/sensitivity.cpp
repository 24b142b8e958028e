#include "dpadaln/sensitivity.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <fmt/format.h>

#include "dpadaln/rng.hpp"

namespace dpadaln::sens {

void ArchConstants::validate() const {
  for (double v : {A0, a_c, a_gamma, a_beta, a_alpha}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw Error("ArchConstants: gradient constants must be finite and >= 0");
  }
  for (double v : {L_LN, L_F, U_max, H_max, G_ell, omega_max, X_max}) {
    if (!(v > 0.0) || !std::isfinite(v)) throw Error("ArchConstants: assumption constants must be finite and > 0");
  }
}

void ReferenceMagnitudes::validate() const {
  for (double v : {C_ref, Gamma_ref, B_ref, A_ref}) {
    if (!(v > 0.0) || !std::isfinite(v)) throw Error("ReferenceMagnitudes: references must be finite and > 0");
  }
}

double block_jacobian_bound(const ArchConstants& k, const model::BoundConfig& b) {
  if (b.alpha_max == 0.0) return 1.0;
  return 1.0 + b.alpha_max * k.L_F * b.gamma_max * k.L_LN;
}

double s_aware(const ArchConstants& k, const model::BoundConfig& b) {
  // 0 * inf is taken as 0: a term with a zero constant does not depend on its bound.
  const auto term = [](double a, double m) { return a == 0.0 ? 0.0 : a * m; };
  return k.A0 + term(k.a_c, b.c_max) + term(k.a_gamma, b.gamma_max) + term(k.a_beta, b.beta_max) +
         term(k.a_alpha, b.alpha_max);
}

double rho_bound(double s, double C) {
  if (!(C > 0.0)) throw Error("rho_bound: C must be positive");
  return s / C;
}

ConvexRatio convex_ratio(const ArchConstants& k, const model::BoundConfig& b, const ReferenceMagnitudes& refs) {
  refs.validate();
  const std::array<double, 5> u{k.A0, k.a_c * refs.C_ref, k.a_gamma * refs.Gamma_ref, k.a_beta * refs.B_ref,
                                k.a_alpha * refs.A_ref};
  ConvexRatio out;
  for (double v : u) {
    if (!(v >= 0.0)) throw Error("convex_ratio: negative weight");
    out.denominator += v;
  }
  if (!(out.denominator > 0.0)) throw Error("convex_ratio: all weights are zero");
  out.r = {b.c_max / refs.C_ref, b.gamma_max / refs.Gamma_ref, b.beta_max / refs.B_ref, b.alpha_max / refs.A_ref};
  double lambda_sum = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    out.lambda[i] = u[i] / out.denominator;
    lambda_sum += out.lambda[i];
  }
  if (std::abs(lambda_sum - 1.0) > 1e-12) throw Error("convex_ratio: weights do not sum to one");
  out.ratio = out.lambda[0];
  for (std::size_t i = 0; i < 4; ++i) {
    if (out.lambda[i + 1] > 0.0) out.ratio += out.lambda[i + 1] * out.r[i];
  }
  return out;
}

double brute_force_grad_max(const LossBuilder& loss, const ParamSet& params, const std::vector<Tensor>& x_grid,
                            const std::vector<Tensor>& c_grid) {
  double best = 0.0;
  for (const auto& x : x_grid) {
    for (const auto& c : c_grid) {
      ad::Tape tape;
      ad::Var l = loss(tape, params, x, c);
      tape.backward(l);
      const double n = tape.parameter_gradients().norm();
      if (!std::isfinite(n)) throw Error("brute_force_grad_max: non-finite gradient");
      best = std::max(best, n);
    }
  }
  return best;
}

namespace {

std::string block_id(std::size_t b, const char* name) { return "block" + std::to_string(b) + "." + name; }

Tensor gaussian(CounterRng& rng, std::vector<std::size_t> shape, double sd) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = sd * rng.normal();
  return t;
}

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double spectral_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  return svd.singularValues()(0);
}

// Rows: output coordinates; columns: the concatenated coordinates of `wrt`.
Matrix jacobian(ad::Tape& tape, ad::Var out, const std::vector<ad::Var>& wrt) {
  std::size_t cols = 0;
  for (const auto& w : wrt) cols += w.value().size();
  const std::size_t rows = out.value().size();
  Matrix J = Matrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  Tensor seed(out.value().shape, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    tape.zero_grad();
    seed[i] = 1.0;
    tape.backward(out, seed);
    seed[i] = 0.0;
    std::size_t off = 0;
    for (const auto& w : wrt) {
      const Tensor& g = tape.grad(w.id);
      const std::size_t n = w.value().size();
      if (g.size() == n) {
        for (std::size_t j = 0; j < n; ++j) J(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(off + j)) = g[j];
      }
      off += n;
    }
  }
  return J;
}

double grad_norm(const ad::Tape& tape, ad::Var v) {
  const Tensor& g = tape.grad(v.id);
  return g.size() == v.value().size() ? l2_norm(g) : 0.0;
}

}  // namespace

double operator_norm(const Tensor& m) {
  if (m.rank() == 1) return l2_norm(m);
  Matrix a = Eigen::Map<const Matrix>(m.data.data(), static_cast<Eigen::Index>(m.rows()),
                                      static_cast<Eigen::Index>(m.cols()));
  return spectral_norm(a);
}

MicroNet::MicroNet(MicroNetConfig config, model::BoundConfig bounds, std::uint64_t seed)
    : config_(config), bounds_(std::move(bounds)) {
  const auto& c = config_;
  if (c.depth == 0 || c.seq_len == 0 || c.hidden == 0 || c.cond_dim == 0 || c.heads == 0 || c.hidden % c.heads != 0) {
    throw Error("MicroNet: invalid configuration");
  }
  bounds_.validate();
  CounterRng rng(seed, /*stream=*/0x5e45);
  const std::size_t d = c.hidden, md = c.hidden * c.mlp_ratio, k = c.cond_dim;
  const auto inv_sqrt = [](std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
  for (std::size_t b = 0; b < c.depth; ++b) {
    params_.add(block_id(b, "mod.W"), gaussian(rng, {k, 3 * d}, 1.0));
    Tensor mod_b = gaussian(rng, {3 * d}, 0.5);
    for (std::size_t j = 0; j < d; ++j) mod_b[j] += 1.0;
    params_.add(block_id(b, "mod.b"), std::move(mod_b));
    params_.add(block_id(b, "attn.Wq"), gaussian(rng, {d, d}, inv_sqrt(d)));
    params_.add(block_id(b, "attn.Wk"), gaussian(rng, {d, d}, inv_sqrt(d)));
    params_.add(block_id(b, "attn.Wv"), gaussian(rng, {d, d}, inv_sqrt(d)));
    params_.add(block_id(b, "attn.Wo"), gaussian(rng, {d, d}, inv_sqrt(d)));
    params_.add(block_id(b, "mlp.W1"), gaussian(rng, {d, md}, inv_sqrt(d)));
    params_.add(block_id(b, "mlp.b1"), gaussian(rng, {md}, 0.1));
    params_.add(block_id(b, "mlp.W2"), gaussian(rng, {md, d}, inv_sqrt(md)));
    params_.add(block_id(b, "mlp.b2"), gaussian(rng, {d}, 0.1));
  }
  target_ = gaussian(rng, {c.seq_len, d}, 1.0);
}

MicroNet::Graph MicroNet::build(ad::Tape& tape, const ParamSet& params, const Tensor& x, const Tensor& c) const {
  const auto& cfg = config_;
  if (x.rank() != 2 || x.rows() != cfg.seq_len || x.cols() != cfg.hidden) throw Error("MicroNet: input shape mismatch");
  if (c.size() != cfg.cond_dim) throw Error("MicroNet: condition length mismatch");
  tape.parameters(params);
  const auto get = [&](std::size_t b, const char* name) { return tape.parameter_var(block_id(b, name)); };

  Graph g;
  Tensor c_row = c;
  c_row.shape = {1, c.size()};
  g.c_hat = tape.constant(std::move(c_row));
  if (bounds_.bound_condition && !std::isinf(bounds_.c_max)) g.c_hat = ad::project_l2(g.c_hat, bounds_.c_max);
  ad::Var h = tape.constant(x);
  for (std::size_t b = 0; b < cfg.depth; ++b) {
    g.block_inputs.push_back(h);
    g.mods.push_back(model::modulation_on_tape(g.c_hat, get(b, "mod.W"), get(b, "mod.b"), cfg.hidden, bounds_));
    g.weights.push_back({get(b, "attn.Wq"), get(b, "attn.Wk"), get(b, "attn.Wv"), get(b, "attn.Wo"),
                         get(b, "mlp.W1"), get(b, "mlp.b1"), get(b, "mlp.W2"), get(b, "mlp.b2")});
    model::BlockNodes nodes;
    h = model::adaln_block(h, g.mods.back().gamma, g.mods.back().beta, g.mods.back().alpha, g.weights.back(),
                           cfg.heads, &nodes);
    g.blocks.push_back(nodes);
  }
  g.loss = ad::scale(ad::sum_squares(ad::sub(h, tape.constant(target_))), 0.5);
  return g;
}

ad::Var MicroNet::loss(ad::Tape& tape, const ParamSet& params, const Tensor& x, const Tensor& c) const {
  return build(tape, params, x, c).loss;
}

LossBuilder MicroNet::loss_builder() const {
  return [this](ad::Tape& tape, const ParamSet& p, const Tensor& x, const Tensor& c) { return loss(tape, p, x, c); };
}

std::vector<Tensor> MicroNet::input_grid(std::size_t n, std::uint64_t seed, double scale) const {
  CounterRng rng(seed, /*stream=*/0x9a1d);
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor x = gaussian(rng, {config_.seq_len, config_.hidden}, 1.0);
    const double target_norm = scale * rng.uniform(0.25, 2.0);
    x.data = [&] {
      const double nrm = l2_norm(x);
      std::vector<double> v = x.data;
      for (double& e : v) e *= target_norm / nrm;
      return v;
    }();
    out.push_back(std::move(x));
  }
  return out;
}

std::vector<Tensor> MicroNet::condition_grid(std::size_t n, std::uint64_t seed, double scale) const {
  CounterRng rng(seed, /*stream=*/0xc0d1);
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor c = gaussian(rng, {config_.cond_dim}, 1.0);
    const double nrm = l2_norm(c), target_norm = scale * rng.uniform(0.25, 2.0);
    for (double& e : c.data) e *= target_norm / nrm;
    out.push_back(std::move(c));
  }
  return out;
}

MeasuredConstants measure_constants(const MicroNet& net, const std::vector<Tensor>& x_grid,
                                    const std::vector<Tensor>& c_grid, double margin) {
  if (x_grid.empty() || c_grid.empty()) throw Error("measure_constants: empty grid");
  const auto& cfg = net.config();
  const std::size_t depth = cfg.depth;
  double sup_x = 0.0, sup_u = 0.0, sup_h = 0.0, sup_ln = 0.0, sup_f = 0.0, sup_g = 0.0, sup_block = 0.0;
  double sup_raw = 0.0, sup_total = 0.0;
  std::vector<double> sup_dy(depth, 0.0), sup_jtheta(depth, 0.0);

  for (const auto& x : x_grid) {
    sup_x = std::max(sup_x, l2_norm(x));
    for (const auto& c : c_grid) {
      ad::Tape tape;
      MicroNet::Graph g = net.build(tape, net.params(), x, c);
      tape.backward(g.loss);
      sup_total = std::max(sup_total, tape.parameter_gradients().norm());
      double raw_sum = 0.0;
      for (std::size_t b = 0; b < depth; ++b) {
        raw_sum += grad_norm(tape, tape.parameter_var(block_id(b, "mod.b")));
        sup_dy[b] = std::max(sup_dy[b], grad_norm(tape, g.blocks[b].y));
      }
      sup_raw = std::max(sup_raw, raw_sum);
      sup_g = std::max(sup_g, grad_norm(tape, g.blocks.back().y));

      for (std::size_t b = 0; b < depth; ++b) {
        const Tensor& xb = g.block_inputs[b].value();
        const Tensor& vb = g.blocks[b].v.value();
        sup_u = std::max(sup_u, l2_norm(g.blocks[b].u.value()));
        sup_h = std::max(sup_h, l2_norm(g.blocks[b].h.value()));
        {
          ad::Tape t;
          ad::Var in = t.input(xb);
          sup_ln = std::max(sup_ln, spectral_norm(jacobian(t, ad::layer_norm(in), {in})));
        }
        const model::BlockWeights& w = g.weights[b];
        {
          ad::Tape t;
          ad::Var in = t.input(vb);
          model::BlockWeights wt{t.parameter("wq", w.wq.value()), t.parameter("wk", w.wk.value()),
                                 t.parameter("wv", w.wv.value()), t.parameter("wo", w.wo.value()),
                                 t.parameter("w1", w.w1.value()), t.parameter("b1", w.b1.value()),
                                 t.parameter("w2", w.w2.value()), t.parameter("b2", w.b2.value())};
          ad::Var h = model::feed_forward(in, wt, cfg.heads);
          sup_f = std::max(sup_f, spectral_norm(jacobian(t, h, {in})));
          sup_jtheta[b] = std::max(
              sup_jtheta[b], spectral_norm(jacobian(t, h, {wt.wq, wt.wk, wt.wv, wt.wo, wt.w1, wt.b1, wt.w2, wt.b2})));
        }
        {
          ad::Tape t;
          ad::Var in = t.input(xb);
          const auto cst = [&](ad::Var v) { return t.constant(v.value()); };
          model::BlockWeights wc{cst(w.wq), cst(w.wk), cst(w.wv), cst(w.wo), cst(w.w1), cst(w.b1), cst(w.w2), cst(w.b2)};
          ad::Var y = model::adaln_block(in, cst(g.mods[b].gamma), cst(g.mods[b].beta), cst(g.mods[b].alpha), wc,
                                         cfg.heads);
          sup_block = std::max(sup_block, spectral_norm(jacobian(t, y, {in})));
        }
      }
    }
  }

  double omega = 0.0;
  for (const auto& e : net.params().entries()) {
    if (e.value.rank() == 2) omega = std::max(omega, operator_norm(e.value));
  }
  const auto& bounds = net.bounds();
  MeasuredConstants m;
  ArchConstants& k = m.consts;
  k.A0 = margin * sup_raw;
  k.a_c = margin * sup_raw;
  double alpha_part = 0.0;
  for (std::size_t b = 0; b < depth; ++b) alpha_part += sup_dy[b] * sup_jtheta[b];
  k.a_alpha = margin * alpha_part;
  if (!bounds.bound_modulation || std::isinf(bounds.alpha_max)) {
    throw Error("measure_constants: the modulation bounds must be active and finite");
  }
  const auto positive = [](double v) { return std::max(v, 1e-12); };
  k.L_LN = positive(margin * sup_ln);
  k.L_F = positive(margin * sup_f);
  k.U_max = positive(margin * sup_u);
  k.H_max = positive(margin * sup_h);
  k.G_ell = positive(margin * sup_g);
  k.omega_max = positive(margin * omega);
  k.X_max = positive(margin * sup_x);
  m.block_jacobian = sup_block;
  m.grad_max = sup_total;
  return m;
}

BoundReport make_bound_report(const ArchConstants& k, const model::BoundConfig& b, const ReferenceMagnitudes& refs,
                              double clip_C) {
  BoundReport r;
  r.consts = k;
  r.bounds = b;
  r.refs = refs;
  r.clip_C = clip_C;
  r.s_aware = s_aware(k, b);
  r.rho = rho_bound(r.s_aware, clip_C);
  r.block_jacobian = block_jacobian_bound(k, b);
  r.convex = convex_ratio(k, b, refs);
  return r;
}

std::string format_bound_report(const BoundReport& r) {
  const auto& k = r.consts;
  const auto& b = r.bounds;
  std::string s;
  s += "[bounds]\n";
  s += fmt::format("c_max = {:.6g}\ngamma_max = {:.6g}\nbeta_max = {:.6g}\nalpha_max = {:.6g}\n", b.c_max, b.gamma_max,
                   b.beta_max, b.alpha_max);
  s += "[constants]\n";
  s += fmt::format("A0 = {:.6g}\na_c = {:.6g}\na_gamma = {:.6g}\na_beta = {:.6g}\na_alpha = {:.6g}\n", k.A0, k.a_c,
                   k.a_gamma, k.a_beta, k.a_alpha);
  s += fmt::format("L_LN = {:.6g}\nL_F = {:.6g}\nU_max = {:.6g}\nH_max = {:.6g}\nG_ell = {:.6g}\n", k.L_LN, k.L_F,
                   k.U_max, k.H_max, k.G_ell);
  s += fmt::format("omega_max = {:.6g}\nX_max = {:.6g}\n", k.omega_max, k.X_max);
  s += "[references]\n";
  s += fmt::format("C_ref = {:.6g}\nGamma_ref = {:.6g}\nB_ref = {:.6g}\nA_ref = {:.6g}\n", r.refs.C_ref,
                   r.refs.Gamma_ref, r.refs.B_ref, r.refs.A_ref);
  s += "[result]\n";
  s += fmt::format("clip_C = {:.6g}\nS_aware = {:.6g}\nrho = {:.6g}\nC_block = {:.6g}\n", r.clip_C, r.s_aware, r.rho,
                   r.block_jacobian);
  s += fmt::format("S_vanilla_ref = {:.6g}\nratio = {:.6g}\n", r.convex.denominator, r.convex.ratio);
  const char* names[5] = {"0", "c", "gamma", "beta", "alpha"};
  for (std::size_t i = 0; i < 5; ++i) s += fmt::format("lambda_{} = {:.6g}\n", names[i], r.convex.lambda[i]);
  for (std::size_t i = 0; i < 4; ++i) s += fmt::format("r_{} = {:.6g}\n", names[i + 1], r.convex.r[i]);
  return s;
}

}  // namespace dpadaln::sens
