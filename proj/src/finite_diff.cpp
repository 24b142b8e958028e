#include "dpadaln/finite_diff.hpp"

#include <algorithm>
#include <cmath>

namespace dpadaln::ad {

double evaluate(const LossGraph& graph, const ParamSet& params) {
  Tape tape;
  return graph(tape, params).value().item();
}

GradientVector gradient(const LossGraph& graph, const ParamSet& params) {
  Tape tape;
  Var loss = graph(tape, params);
  tape.backward(loss);
  GradientVector g = tape.parameter_gradients();
  // Parameters the builder never registered still get an (all-zero) entry.
  GradientVector out = params.zeros_like<GradTag>();
  for (const auto& e : g.entries()) out.at(e.id) = e.value;
  return out;
}

namespace {

void check_epsilon(double epsilon) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) {
    throw Error("finite_diff: epsilon must lie in [1e-7, 1e-3]");
  }
}

Error non_finite(std::size_t coord, const std::string& id, std::size_t i) {
  return Error("finite_diff: non-finite perturbed loss at coordinate " + std::to_string(coord) + " ('" + id +
               "'[" + std::to_string(i) + "])");
}

}  // namespace

GradientVector finite_diff(const LossGraph& graph, const ParamSet& params, double epsilon) {
  check_epsilon(epsilon);
  ParamSet work = params;
  GradientVector out = params.zeros_like<GradTag>();
  std::size_t coord = 0;
  for (std::size_t k = 0; k < work.entries().size(); ++k) {
    auto& values = work.entries()[k].value.data;
    auto& grads = out.entries()[k].value.data;
    for (std::size_t i = 0; i < values.size(); ++i, ++coord) {
      const double orig = values[i];
      values[i] = orig + epsilon;
      const double fp = evaluate(graph, work);
      values[i] = orig - epsilon;
      const double fm = evaluate(graph, work);
      values[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw non_finite(coord, work.entries()[k].id, i);
      }
      grads[i] = (fp - fm) / (2.0 * epsilon);
    }
  }
  return out;
}

GradientVector finite_diff(Tape& tape, Var loss, double epsilon) {
  check_epsilon(epsilon);
  if (loss.tape != &tape || tape.value(loss.id).size() != 1) {
    throw Error("finite_diff: loss must be a scalar node of the given tape");
  }
  GradientVector out;
  std::size_t coord = 0;
  for (const auto& [id, node] : tape.parameter_nodes()) {
    Tensor& value = tape.leaf_value(node);
    Tensor grad = Tensor::zeros_like(value);
    const auto downstream = tape.descendants(node);
    if (std::find(downstream.begin(), downstream.end(), loss.id) == downstream.end()) {
      coord += value.size();
      out.add(id, std::move(grad));
      continue;
    }
    for (std::size_t i = 0; i < value.size(); ++i, ++coord) {
      const double orig = value[i];
      value[i] = orig + epsilon;
      tape.recompute(downstream);
      const double fp = tape.value(loss.id).item();
      value[i] = orig - epsilon;
      tape.recompute(downstream);
      const double fm = tape.value(loss.id).item();
      value[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        tape.recompute(downstream);
        throw non_finite(coord, id, i);
      }
      grad[i] = (fp - fm) / (2.0 * epsilon);
    }
    tape.recompute(downstream);
    out.add(id, std::move(grad));
  }
  return out;
}

double max_relative_error(const GradientVector& a, const GradientVector& b, double floor) {
  if (!a.same_layout(b)) throw Error("max_relative_error: layout mismatch");
  const auto fa = a.flatten();
  const auto fb = b.flatten();
  double worst = 0.0;
  for (std::size_t i = 0; i < fa.size(); ++i) {
    const double denom = std::max({std::abs(fa[i]), std::abs(fb[i]), floor});
    worst = std::max(worst, std::abs(fa[i] - fb[i]) / denom);
  }
  return worst;
}

}  // namespace dpadaln::ad
