#pragma once

#include <functional>

#include "dpadaln/autodiff.hpp"

namespace dpadaln::ad {

/// Builds a scalar loss on a fresh tape. The builder registers the parameters
/// it uses (typically via tape.parameters(params)).
using LossGraph = std::function<Var(Tape&, const ParamSet&)>;

double evaluate(const LossGraph& graph, const ParamSet& params);

/// Reverse-mode gradient of the loss w.r.t. every registered parameter.
GradientVector gradient(const LossGraph& graph, const ParamSet& params);

/// Central differences (f(p + eps e_i) - f(p - eps e_i)) / (2 eps) for every
/// coordinate. epsilon must lie in [1e-7, 1e-3].
GradientVector finite_diff(const LossGraph& graph, const ParamSet& params, double epsilon);

/// Central differences over the parameter leaves of an already recorded
/// graph: each perturbation re-evaluates only the nodes downstream of the
/// perturbed leaf. Leaf values are restored before returning. The result is
/// ordered like tape.parameter_nodes().
GradientVector finite_diff(Tape& tape, Var loss, double epsilon);

/// Largest coordinatewise |a - b| / max(|a|, |b|, floor).
double max_relative_error(const GradientVector& a, const GradientVector& b, double floor);

}  // namespace dpadaln::ad
