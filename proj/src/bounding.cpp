#include "dpadaln/bounding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dpadaln::model {

std::string_view to_string(BoundOperator op) {
  switch (op) {
    case BoundOperator::tanh: return "tanh";
    case BoundOperator::hard_clamp: return "hard_clamp";
    case BoundOperator::soft_clamp_band: return "soft_clamp_band";
    case BoundOperator::clamp_ste: return "clamp_ste";
  }
  return "?";
}

BoundOperator parse_bound_operator(std::string_view name) {
  if (name == "tanh") return BoundOperator::tanh;
  if (name == "hard_clamp") return BoundOperator::hard_clamp;
  if (name == "soft_clamp_band") return BoundOperator::soft_clamp_band;
  if (name == "clamp_ste") return BoundOperator::clamp_ste;
  throw Error("unknown bounding operator '" + std::string(name) + "'");
}

void BoundConfig::validate() const {
  const double limits[] = {c_max, gamma_max, beta_max, alpha_max};
  for (double m : limits) {
    if (!(m > 0.0)) throw Error("BoundConfig: every limit must be strictly positive");
  }
  if (band_eps && !(*band_eps >= 0.0)) throw Error("BoundConfig: band_eps must be non-negative");
  if (op == BoundOperator::soft_clamp_band && band_eps) {
    const double smallest = std::min({gamma_max, beta_max, alpha_max});
    if (!(*band_eps < smallest)) throw Error("BoundConfig: band_eps must be below the smallest limit");
  }
}

double BoundConfig::band_for(double limit) const { return band_eps ? *band_eps : 0.1 * limit; }

BoundConfig BoundConfig::scaled(double factor) const {
  BoundConfig out = *this;
  out.c_max *= factor;
  out.gamma_max *= factor;
  out.beta_max *= factor;
  out.alpha_max *= factor;
  return out;
}

BoundConfig BoundConfig::unbounded() {
  constexpr double inf = std::numeric_limits<double>::infinity();
  BoundConfig b;
  b.c_max = b.gamma_max = b.beta_max = b.alpha_max = inf;
  b.bound_condition = false;
  b.bound_modulation = false;
  return b;
}

std::vector<double> project_condition(const std::vector<double>& c, double c_max) {
  double sq = 0.0;
  for (double v : c) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm <= c_max) return c;
  std::vector<double> out = c;
  for (double& v : out) v *= c_max / norm;
  return out;
}

namespace {

// Identity below M - eps, y = a + eps (2s - s^2) with s = (|x| - a) / (2 eps)
// on the band, M beyond. This is the cubic Hermite blend with unit slope at
// the inner edge and zero slope at the outer edge (the cubic term cancels).
double soft_band(double x, double limit, double eps) {
  const double ax = std::abs(x);
  const double inner = limit - eps;
  if (ax <= inner) return x;
  if (ax >= limit + eps) return std::copysign(limit, x);
  const double s = (ax - inner) / (2.0 * eps);
  return std::copysign(inner + eps * (2.0 * s - s * s), x);
}

double soft_band_grad(double x, double limit, double eps) {
  const double ax = std::abs(x);
  const double inner = limit - eps;
  if (ax <= inner) return 1.0;
  if (ax >= limit + eps) return 0.0;
  const double s = (ax - inner) / (2.0 * eps);
  return 1.0 - s;
}

}  // namespace

double bound_op(double x, double limit, BoundOperator kind, double band_eps) {
  if (!(limit > 0.0)) throw Error("bound_op: limit must be positive");
  if (std::isinf(limit)) return x;
  switch (kind) {
    case BoundOperator::tanh: return limit * std::tanh(x / limit);
    case BoundOperator::hard_clamp:
    case BoundOperator::clamp_ste: return std::clamp(x, -limit, limit);
    case BoundOperator::soft_clamp_band:
      if (band_eps <= 0.0) return std::clamp(x, -limit, limit);
      return soft_band(x, limit, band_eps);
  }
  return x;
}

double bound_op_grad(double x, double limit, BoundOperator kind, double band_eps) {
  if (std::isinf(limit)) return 1.0;
  switch (kind) {
    case BoundOperator::tanh: {
      const double t = std::tanh(x / limit);
      return 1.0 - t * t;
    }
    case BoundOperator::hard_clamp: return std::abs(x) <= limit ? 1.0 : 0.0;
    case BoundOperator::clamp_ste: return 1.0;
    case BoundOperator::soft_clamp_band:
      if (band_eps <= 0.0) return std::abs(x) <= limit ? 1.0 : 0.0;
      return soft_band_grad(x, limit, band_eps);
  }
  return 1.0;
}

ad::Var bound_on_tape(ad::Var raw, double limit, BoundOperator kind, double band_eps) {
  if (std::isinf(limit)) return raw;
  switch (kind) {
    case BoundOperator::tanh: return ad::scale(ad::tanh(ad::scale(raw, 1.0 / limit)), limit);
    case BoundOperator::hard_clamp: return ad::clamp(raw, limit);
    case BoundOperator::clamp_ste: return ad::clamp_ste(raw, limit);
    case BoundOperator::soft_clamp_band:
      return ad::map(
          raw, "soft_clamp_band",
          [=](double x) { return bound_op(x, limit, BoundOperator::soft_clamp_band, band_eps); },
          [=](double x) { return bound_op_grad(x, limit, BoundOperator::soft_clamp_band, band_eps); });
  }
  return raw;
}

}  // namespace dpadaln::model
