#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dpadaln/autodiff.hpp"

namespace dpadaln::model {

enum class BoundOperator { tanh, hard_clamp, soft_clamp_band, clamp_ste };

std::string_view to_string(BoundOperator op);
BoundOperator parse_bound_operator(std::string_view name);

/// The DP-aware limits on the conditioning pathway. An infinite limit turns
/// the corresponding bound into the identity.
struct BoundConfig {
  double c_max = 1.0;
  double gamma_max = 1.0;
  double beta_max = 1.0;
  double alpha_max = 1.0;
  BoundOperator op = BoundOperator::tanh;
  /// Half-width of the soft_clamp_band transition; 0.1 * M when unset.
  std::optional<double> band_eps;
  /// Component switches: l2 projection of c, coordinatewise bounding of (gamma, beta, alpha).
  bool bound_condition = true;
  bool bound_modulation = true;

  void validate() const;
  double band_for(double limit) const;
  /// All four limits multiplied by `factor` (tightness profiles).
  BoundConfig scaled(double factor) const;
  bool any_active() const { return bound_condition || bound_modulation; }

  static BoundConfig unbounded();
};

/// Scales c into the l2 ball of radius c_max (identity inside the ball).
std::vector<double> project_condition(const std::vector<double>& c, double c_max);

/// Coordinatewise bounding operator B_M; |result| <= M for every kind.
double bound_op(double x, double limit, BoundOperator kind, double band_eps);
/// Derivative used in backpropagation (1 everywhere for clamp_ste).
double bound_op_grad(double x, double limit, BoundOperator kind, double band_eps);

/// Applies B_M to every entry of `raw` on the tape.
ad::Var bound_on_tape(ad::Var raw, double limit, BoundOperator kind, double band_eps);

}  // namespace dpadaln::model
