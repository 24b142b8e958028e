#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "dpadaln/autodiff.hpp"
#include "dpadaln/bounding.hpp"
#include "dpadaln/named_tensors.hpp"

namespace dpadaln::model {

struct ModelConfig {
  std::size_t depth = 2;
  std::size_t hidden = 32;
  std::size_t heads = 4;
  std::size_t seq_len = 24;
  std::size_t channels = 3;
  std::size_t cond_dim = 16;
  std::size_t mlp_ratio = 2;
  std::size_t time_embed_dim = 8;

  void validate() const;
  std::size_t head_dim() const { return hidden / heads; }
  /// Length of the raw condition feature vector fed to the condition embedding.
  std::size_t cond_features() const { return 1 + 2 * channels + time_embed_dim; }

  static ModelConfig desk();
  static ModelConfig paper();
};

struct ModulationParams {
  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> alpha;
};

/// Split of the parameter identifiers into the conditioning pathway and the rest.
struct ParamPartition {
  std::set<std::string> cond_ids;
  std::set<std::string> other_ids;
};

struct PartitionedGradient {
  GradientVector cond;
  GradientVector other;
  double total_norm = 0.0;
  double cond_norm = 0.0;
  double other_norm = 0.0;
};

PartitionedGradient partition_gradient(const GradientVector& g, const ParamPartition& part);

/// Raw modulation W c_hat + b (W is k x 3d, b is 3d, ordered gamma|beta|alpha)
/// passed coordinatewise through the bounding operator when enabled.
ModulationParams modulation(const std::vector<double>& c_hat, const Tensor& weight, const Tensor& bias,
                            const BoundConfig& bounds);

/// Tape handles for the weights of one F = attention + MLP sub-network.
struct BlockWeights {
  ad::Var wq, wk, wv, wo;
  ad::Var w1, b1, w2, b2;
};

/// Intermediate nodes of one block, exposed for Jacobian measurements.
struct BlockNodes {
  ad::Var u;  // LN(x)
  ad::Var v;  // gamma * u + beta
  ad::Var h;  // F(v)
  ad::Var y;  // x + alpha * h
};

/// F(v) = a + MLP(v + a) with a = multi-head self-attention(v).
ad::Var feed_forward(ad::Var v, const BlockWeights& w, std::size_t heads);

/// y = x + alpha * F(gamma * LN(x) + beta); gamma, beta, alpha are 1 x d rows.
ad::Var adaln_block(ad::Var x, ad::Var gamma, ad::Var beta, ad::Var alpha, const BlockWeights& w,
                    std::size_t heads, BlockNodes* nodes = nullptr);

/// (gamma, beta, alpha) on the tape from a projected condition row.
struct ModulationVars {
  ad::Var gamma, beta, alpha;
};
ModulationVars modulation_on_tape(ad::Var c_hat, ad::Var weight, ad::Var bias, std::size_t hidden,
                                  const BoundConfig& bounds);

/// Magnitudes seen on the conditioning path during one forward pass.
struct ConditionTrace {
  double cond_norm = 0.0;         // ||c|| before projection
  std::vector<double> gamma_abs;  // max |gamma| per block
  std::vector<double> beta_abs;
  std::vector<double> alpha_abs;
};

/// Mask-aware condition features: observed fraction, per-channel mean and std
/// of observed entries, sinusoidal timestep embedding.
Tensor condition_features(const Tensor& x0, const std::vector<std::uint8_t>& observed, std::size_t t,
                          std::size_t time_embed_dim);

std::vector<double> timestep_embedding(std::size_t t, std::size_t dim);

/// Conditional noise-prediction transformer built from AdaLN-Zero blocks.
class DenoiserModel {
 public:
  DenoiserModel(ModelConfig config, BoundConfig bounds);

  const ModelConfig& config() const { return config_; }
  const BoundConfig& bounds() const { return bounds_; }

  ParamSet init_params(std::uint64_t seed) const;
  ParamPartition partition() const;

  /// Predicted noise (L x K). `x_in` is L x K, `observed` has L bits
  /// (1 = observed), `cond` holds cond_features() entries.
  ad::Var forward(ad::Tape& tape, const ParamSet& params, const Tensor& x_in,
                  const std::vector<std::uint8_t>& observed, const Tensor& cond,
                  ConditionTrace* trace = nullptr) const;

  Tensor predict(const ParamSet& params, const Tensor& x_in, const std::vector<std::uint8_t>& observed,
                 const Tensor& cond) const;

 private:
  ModelConfig config_;
  BoundConfig bounds_;
  Tensor positional_;
};

Tensor sinusoidal_positions(std::size_t length, std::size_t dim);

}  // namespace dpadaln::model
