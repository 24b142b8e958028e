#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "dpadaln/autodiff.hpp"
#include "dpadaln/model.hpp"

namespace dpadaln::sens {

/// Constants of the per-example gradient bound and the assumptions behind it.
struct ArchConstants {
  double A0 = 0.0;
  double a_c = 0.0;
  double a_gamma = 0.0;
  double a_beta = 0.0;
  double a_alpha = 0.0;
  double L_LN = 1.0;
  double L_F = 1.0;
  double U_max = 1.0;
  double H_max = 1.0;
  double G_ell = 1.0;
  double omega_max = 1.0;
  double X_max = 1.0;

  void validate() const;
};

struct ReferenceMagnitudes {
  double C_ref = 1.0;
  double Gamma_ref = 1.0;
  double B_ref = 1.0;
  double A_ref = 1.0;

  void validate() const;
};

/// 1 + alpha_max L_F gamma_max L_LN.
double block_jacobian_bound(const ArchConstants& k, const model::BoundConfig& b);
/// A0 + a_c c_max + a_gamma gamma_max + a_beta beta_max + a_alpha alpha_max.
double s_aware(const ArchConstants& k, const model::BoundConfig& b);
double rho_bound(double s_aware, double C);

struct ConvexRatio {
  double ratio = 0.0;
  double denominator = 0.0;          // D = S_vanilla^ref
  std::array<double, 5> lambda{};    // 0, c, gamma, beta, alpha
  std::array<double, 4> r{};         // c, gamma, beta, alpha
};

ConvexRatio convex_ratio(const ArchConstants& k, const model::BoundConfig& b, const ReferenceMagnitudes& refs);

using LossBuilder = std::function<ad::Var(ad::Tape&, const ParamSet&, const Tensor& x, const Tensor& c)>;

/// Largest per-example gradient norm over the grid x_grid x c_grid.
double brute_force_grad_max(const LossBuilder& loss, const ParamSet& params, const std::vector<Tensor>& x_grid,
                            const std::vector<Tensor>& c_grid);

struct MicroNetConfig {
  std::size_t depth = 1;
  std::size_t seq_len = 2;
  std::size_t hidden = 4;
  std::size_t cond_dim = 2;
  std::size_t heads = 1;
  std::size_t mlp_ratio = 1;
};

/// Stack of AdaLN-Zero blocks with the condition fed directly into the
/// modulation projections; loss = 0.5 ||y - target||^2.
class MicroNet {
 public:
  MicroNet(MicroNetConfig config, model::BoundConfig bounds, std::uint64_t seed);

  struct Graph {
    ad::Var loss;
    ad::Var c_hat;
    std::vector<ad::Var> block_inputs;
    std::vector<model::BlockNodes> blocks;
    std::vector<model::ModulationVars> mods;
    std::vector<model::BlockWeights> weights;
  };

  Graph build(ad::Tape& tape, const ParamSet& params, const Tensor& x, const Tensor& c) const;
  ad::Var loss(ad::Tape& tape, const ParamSet& params, const Tensor& x, const Tensor& c) const;
  LossBuilder loss_builder() const;

  const MicroNetConfig& config() const { return config_; }
  const model::BoundConfig& bounds() const { return bounds_; }
  const ParamSet& params() const { return params_; }
  const Tensor& target() const { return target_; }

  /// Random inputs (L x d) and conditions (length k) spread over [0.25, 2] x scale in norm.
  std::vector<Tensor> input_grid(std::size_t n, std::uint64_t seed, double scale = 1.0) const;
  std::vector<Tensor> condition_grid(std::size_t n, std::uint64_t seed, double scale = 1.0) const;

 private:
  MicroNetConfig config_;
  model::BoundConfig bounds_;
  ParamSet params_;
  Tensor target_;
};

struct MeasuredConstants {
  ArchConstants consts;
  /// sup of ||dy/dx||_op over blocks and grid points.
  double block_jacobian = 0.0;
  /// sup of the per-example gradient norm over the grid.
  double grad_max = 0.0;
};

/// Measures the constants on the grid: Jacobian operator norms and group
/// gradient norms, each sup inflated by `margin`. a_gamma and a_beta are
/// left at zero (their effect is inside the measured F Jacobian).
MeasuredConstants measure_constants(const MicroNet& net, const std::vector<Tensor>& x_grid,
                                    const std::vector<Tensor>& c_grid, double margin = 1.1);

/// Spectral norm of a row-major matrix.
double operator_norm(const Tensor& m);

struct BoundReport {
  ArchConstants consts;
  model::BoundConfig bounds;
  ReferenceMagnitudes refs;
  double clip_C = 1.0;
  double s_aware = 0.0;
  double rho = 0.0;
  double block_jacobian = 0.0;
  ConvexRatio convex;
};

BoundReport make_bound_report(const ArchConstants& k, const model::BoundConfig& b, const ReferenceMagnitudes& refs,
                              double clip_C);
std::string format_bound_report(const BoundReport& r);

}  // namespace dpadaln::sens
