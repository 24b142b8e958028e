#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "dpadaln/bounding.hpp"
#include "dpadaln/finite_diff.hpp"
#include "dpadaln/model.hpp"
#include "dpadaln/rng.hpp"

using namespace dpadaln;
using model::BoundConfig;
using model::BoundOperator;

namespace {

constexpr BoundOperator kAllOps[] = {BoundOperator::tanh, BoundOperator::hard_clamp, BoundOperator::soft_clamp_band,
                                     BoundOperator::clamp_ste};

Tensor random_tensor(CounterRng& rng, std::vector<std::size_t> shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = scale * rng.normal();
  return t;
}

// tanh = sinh / cosh from the exponential series in long double.
double tanh_series(double x) {
  long double sh = 0.0L, ch = 0.0L, p = 1.0L;
  for (int n = 0; n < 40; ++n) {
    if (n > 0) p *= static_cast<long double>(x) / n;
    if (n % 2 == 0) ch += p;
    else sh += p;
  }
  return static_cast<double>(sh / ch);
}

model::ModelConfig tiny_config() {
  model::ModelConfig c;
  c.depth = 2;
  c.hidden = 8;
  c.heads = 2;
  c.seq_len = 6;
  c.channels = 2;
  c.cond_dim = 4;
  c.mlp_ratio = 2;
  c.time_embed_dim = 4;
  return c;
}

BoundConfig limits(double c, double g, double b, double a, BoundOperator op = BoundOperator::tanh) {
  BoundConfig bc;
  bc.c_max = c;
  bc.gamma_max = g;
  bc.beta_max = b;
  bc.alpha_max = a;
  bc.op = op;
  return bc;
}

}  // namespace

TEST(ProjectCondition, Examples) {
  EXPECT_EQ(model::project_condition({0.0, 0.0}, 1.0), (std::vector<double>{0.0, 0.0}));
  const auto p = model::project_condition({3.0, 4.0}, 1.0);
  EXPECT_NEAR(p[0], 0.6, 1e-15);
  EXPECT_NEAR(p[1], 0.8, 1e-15);
  EXPECT_EQ(model::project_condition({0.3, 0.4}, 1.0), (std::vector<double>{0.3, 0.4}));
}

TEST(ProjectCondition, OutputNormNeverExceedsLimit) {
  CounterRng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> c(5);
    for (double& v : c) v = rng.normal() * std::exp(rng.uniform(-3.0, 5.0));
    const double m = rng.uniform(0.1, 4.0);
    double n2 = 0.0;
    for (double v : model::project_condition(c, m)) n2 += v * v;
    EXPECT_LE(std::sqrt(n2), m * (1.0 + 1e-15));
  }
}

TEST(BoundOp, Examples) {
  EXPECT_EQ(model::bound_op(0.0, 1.0, BoundOperator::tanh, 0.1), 0.0);
  EXPECT_EQ(model::bound_op(2.0, 1.0, BoundOperator::hard_clamp, 0.1), 1.0);
  EXPECT_NEAR(model::bound_op(1.0, 1.0, BoundOperator::tanh, 0.1), 0.7615941559557649, 1e-15);
  EXPECT_NEAR(model::bound_op(1.0, 1.0, BoundOperator::tanh, 0.1), tanh_series(1.0), 1e-15);
}

TEST(BoundOp, MagnitudeNeverExceedsLimitIncludingExtremes) {
  CounterRng rng(2);
  for (auto op : kAllOps) {
    for (double x : {-1e9, -1e3, -1.0, 0.0, 1.0, 1e3, 1e9}) {
      EXPECT_LE(std::abs(model::bound_op(x, 0.7, op, 0.07)), 0.7);
    }
    for (int i = 0; i < 20000; ++i) {
      const double m = rng.uniform(0.01, 10.0);
      const double x = rng.normal() * std::exp(rng.uniform(-5.0, 20.0));
      EXPECT_LE(std::abs(model::bound_op(x, m, op, 0.1 * m)), m);
    }
  }
}

TEST(BoundOp, MonotoneNonDecreasing) {
  for (auto op : kAllOps) {
    double prev = -std::numeric_limits<double>::infinity();
    for (int i = -4000; i <= 4000; ++i) {
      const double y = model::bound_op(i * 1e-3, 1.5, op, 0.2);
      EXPECT_GE(y, prev) << model::to_string(op) << " at " << i * 1e-3;
      prev = y;
    }
  }
}

TEST(BoundOp, TanhAndSoftBandAreOneLipschitz) {
  CounterRng rng(3);
  for (auto op : {BoundOperator::tanh, BoundOperator::soft_clamp_band}) {
    for (int i = 0; i < 50000; ++i) {
      const double m = rng.uniform(0.1, 3.0);
      const double a = rng.uniform(-2 * m, 2 * m), b = rng.uniform(-2 * m, 2 * m);
      const double fa = model::bound_op(a, m, op, 0.1 * m), fb = model::bound_op(b, m, op, 0.1 * m);
      EXPECT_LE(std::abs(fa - fb), std::abs(a - b) * (1.0 + 1e-12) + 1e-15);
    }
  }
}

TEST(BoundOp, SoftBandIsIdentityInsideAndContinuousAtEdges) {
  const double m = 2.0, eps = 0.25;
  for (double x : {-1.7, -1.0, 0.0, 0.5, 1.74}) {
    EXPECT_EQ(model::bound_op(x, m, BoundOperator::soft_clamp_band, eps), x);
  }
  EXPECT_EQ(model::bound_op(2.3, m, BoundOperator::soft_clamp_band, eps), m);
  EXPECT_EQ(model::bound_op(-5.0, m, BoundOperator::soft_clamp_band, eps), -m);
  for (double edge : {m - eps, m + eps}) {
    const double lo = model::bound_op(edge - 1e-9, m, BoundOperator::soft_clamp_band, eps);
    const double hi = model::bound_op(edge + 1e-9, m, BoundOperator::soft_clamp_band, eps);
    EXPECT_NEAR(lo, hi, 3e-9);
    const double glo = model::bound_op_grad(edge - 1e-9, m, BoundOperator::soft_clamp_band, eps);
    const double ghi = model::bound_op_grad(edge + 1e-9, m, BoundOperator::soft_clamp_band, eps);
    EXPECT_NEAR(glo, ghi, 1e-7);
  }
}

TEST(BoundOp, GradientMatchesCentralDifferenceAwayFromKinks) {
  CounterRng rng(4);
  for (auto op : {BoundOperator::tanh, BoundOperator::soft_clamp_band}) {
    for (int i = 0; i < 2000; ++i) {
      const double x = rng.uniform(-3.0, 3.0), h = 1e-6;
      const double fd = (model::bound_op(x + h, 1.2, op, 0.3) - model::bound_op(x - h, 1.2, op, 0.3)) / (2 * h);
      EXPECT_NEAR(model::bound_op_grad(x, 1.2, op, 0.3), fd, 1e-6);
    }
  }
  EXPECT_EQ(model::bound_op_grad(5.0, 1.0, BoundOperator::clamp_ste, 0.1), 1.0);
  EXPECT_EQ(model::bound_op_grad(5.0, 1.0, BoundOperator::hard_clamp, 0.1), 0.0);
}

TEST(BoundOp, ClampSteForwardEqualsHardClamp) {
  CounterRng rng(5);
  for (int i = 0; i < 10000; ++i) {
    const double x = rng.normal() * 4.0, m = rng.uniform(0.1, 3.0);
    EXPECT_EQ(model::bound_op(x, m, BoundOperator::clamp_ste, 0.1), model::bound_op(x, m, BoundOperator::hard_clamp, 0.1));
  }
}

TEST(BoundConfigValidation, RejectsNonPositiveLimitsAndWideBand) {
  BoundConfig ok = limits(1, 1, 1, 1);
  EXPECT_NO_THROW(ok.validate());
  EXPECT_THROW(limits(0, 1, 1, 1).validate(), Error);
  EXPECT_THROW(limits(1, -1, 1, 1).validate(), Error);
  BoundConfig band = limits(1, 1, 0.5, 1, BoundOperator::soft_clamp_band);
  band.band_eps = 0.6;
  EXPECT_THROW(band.validate(), Error);
  band.band_eps = 0.4;
  EXPECT_NO_THROW(band.validate());
}

TEST(Modulation, ZeroConditionAndBiasGiveZero) {
  const auto m = model::modulation({0.0, 0.0}, Tensor({2, 6}, 0.3), Tensor({6}, 0.0), limits(1, 1, 1, 1));
  for (const auto* v : {&m.gamma, &m.beta, &m.alpha}) {
    for (double x : *v) EXPECT_EQ(x, 0.0);
  }
}

TEST(Modulation, SaturatedGammaUnderTanh) {
  Tensor w({1, 3}, 0.0);
  Tensor b = Tensor::vector({10.0, 0.0, 0.0});
  const auto m = model::modulation({0.0}, w, b, limits(1, 2, 1, 1));
  EXPECT_NEAR(m.gamma[0], 2.0 * tanh_series(5.0), 1e-14);
  EXPECT_NEAR(m.gamma[0], 1.9998184, 1e-7);
}

TEST(Modulation, SoftBandLeavesInteriorRawValuesUnchanged) {
  Tensor w = Tensor::matrix(1, 3, {0.2, -0.3, 0.1});
  Tensor b = Tensor::vector({0.1, 0.2, -0.3});
  BoundConfig bc = limits(1, 1, 1, 1, BoundOperator::soft_clamp_band);
  const auto m = model::modulation({1.5}, w, b, bc);
  EXPECT_DOUBLE_EQ(m.gamma[0], 0.1 + 1.5 * 0.2);
  EXPECT_DOUBLE_EQ(m.beta[0], 0.2 - 1.5 * 0.3);
  EXPECT_DOUBLE_EQ(m.alpha[0], -0.3 + 1.5 * 0.1);
}

TEST(Modulation, BoundedCoordinatesRespectLimits) {
  CounterRng rng(6);
  for (auto op : kAllOps) {
    const BoundConfig bc = limits(1, 0.5, 0.3, 0.2, op);
    const auto m = model::modulation({3.0, -2.0}, random_tensor(rng, {2, 12}, 5.0), random_tensor(rng, {12}, 5.0), bc);
    for (double g : m.gamma) EXPECT_LE(std::abs(g), 0.5);
    for (double b : m.beta) EXPECT_LE(std::abs(b), 0.3);
    for (double a : m.alpha) EXPECT_LE(std::abs(a), 0.2);
  }
}

TEST(Modulation, DimensionMismatchThrows) {
  EXPECT_THROW(model::modulation({1.0, 2.0}, Tensor({3, 6}), Tensor({6}), limits(1, 1, 1, 1)), Error);
  EXPECT_THROW(model::modulation({1.0}, Tensor({1, 6}), Tensor({5}), limits(1, 1, 1, 1)), Error);
}

namespace {

struct BlockFixture {
  std::size_t L = 5, d = 4, heads = 2;
  ParamSet params;

  explicit BlockFixture(std::uint64_t seed, double alpha_scale = 0.5) {
    CounterRng rng(seed);
    params.add("x", random_tensor(rng, {L, d}));
    params.add("gamma", random_tensor(rng, {1, d}));
    params.add("beta", random_tensor(rng, {1, d}, 0.3));
    params.add("alpha", random_tensor(rng, {1, d}, alpha_scale));
    for (const char* id : {"wq", "wk", "wv", "wo"}) params.add(id, random_tensor(rng, {d, d}, 0.5));
    params.add("w1", random_tensor(rng, {d, 2 * d}, 0.5));
    params.add("b1", random_tensor(rng, {1, 2 * d}, 0.1));
    params.add("w2", random_tensor(rng, {2 * d, d}, 0.5));
    params.add("b2", random_tensor(rng, {1, d}, 0.1));
  }

  ad::Var build(ad::Tape& tape, const ParamSet& p, model::BlockNodes* nodes = nullptr) const {
    const auto v = tape.parameters(p);
    model::BlockWeights w{v[4], v[5], v[6], v[7], v[8], v[9], v[10], v[11]};
    return model::adaln_block(v[0], v[1], v[2], v[3], w, heads, nodes);
  }
};

}  // namespace

TEST(AdaLNBlock, ZeroGateIsIdentity) {
  BlockFixture f(7);
  f.params.at("alpha").data.assign(f.d, 0.0);
  ad::Tape tape;
  const ad::Var y = f.build(tape, f.params);
  EXPECT_EQ(y.value().data, f.params.at("x").data);
}

TEST(AdaLNBlock, ComposesResidualGateAndFeedForward) {
  BlockFixture f(8);
  ad::Tape tape;
  model::BlockNodes nodes;
  const ad::Var y = f.build(tape, f.params, &nodes);
  const Tensor& x = f.params.at("x");
  const Tensor& g = f.params.at("gamma");
  const Tensor& b = f.params.at("beta");
  const Tensor& a = f.params.at("alpha");
  for (std::size_t i = 0; i < f.L; ++i) {
    double mean = 0.0, var = 0.0;
    for (std::size_t j = 0; j < f.d; ++j) mean += x(i, j);
    mean /= static_cast<double>(f.d);
    for (std::size_t j = 0; j < f.d; ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= static_cast<double>(f.d);
    for (std::size_t j = 0; j < f.d; ++j) {
      const double u = (x(i, j) - mean) / std::sqrt(var + 1e-5);
      EXPECT_NEAR(nodes.u.value()(i, j), u, 1e-12);
      EXPECT_NEAR(nodes.v.value()(i, j), g[j] * u + b[j], 1e-12);
      EXPECT_NEAR(y.value()(i, j), x(i, j) + a[j] * nodes.h.value()(i, j), 1e-12);
    }
  }
}

TEST(AdaLNBlock, GradientOfSquaredOutputMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    BlockFixture f(100 + seed);
    const ad::LossGraph graph = [&f](ad::Tape& t, const ParamSet& p) { return ad::sum_squares(f.build(t, p)); };
    const auto g = ad::gradient(graph, f.params);
    const auto fd = ad::finite_diff(graph, f.params, 1e-5);
    EXPECT_LE(ad::max_relative_error(g, fd, 1e-5), 1e-4) << "seed " << seed;
  }
}

TEST(PartitionGradient, Examples) {
  const model::DenoiserModel net(tiny_config(), limits(1, 1, 1, 1));
  const auto part = net.partition();
  const ParamSet p = net.init_params(1);
  const GradientVector zero = p.zeros_like<GradTag>();
  const auto z = model::partition_gradient(zero, part);
  EXPECT_EQ(z.cond_norm, 0.0);
  EXPECT_EQ(z.other_norm, 0.0);

  GradientVector only_cond = zero;
  for (auto& e : only_cond.entries()) {
    if (part.cond_ids.contains(e.id)) e.value.data.assign(e.value.size(), 0.5);
  }
  const auto c = model::partition_gradient(only_cond, part);
  EXPECT_EQ(c.other_norm, 0.0);
  EXPECT_GT(c.cond_norm, 0.0);
  EXPECT_DOUBLE_EQ(c.total_norm, c.cond_norm);
}

TEST(PartitionGradient, PythagoreanIdentityOnRandomGradients) {
  const model::DenoiserModel net(tiny_config(), limits(1, 1, 1, 1));
  const auto part = net.partition();
  CounterRng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    GradientVector g = net.init_params(0).zeros_like<GradTag>();
    for (auto& e : g.entries()) {
      for (double& v : e.value.data) v = rng.normal() * std::exp(rng.uniform(-3.0, 3.0));
    }
    const auto r = model::partition_gradient(g, part);
    double direct = 0.0;
    for (const auto& e : g.entries()) {
      for (double v : e.value.data) direct += v * v;
    }
    EXPECT_NEAR(r.total_norm, std::sqrt(direct), 1e-12 * std::sqrt(direct));
    EXPECT_NEAR(r.total_norm * r.total_norm, r.cond_norm * r.cond_norm + r.other_norm * r.other_norm,
                1e-12 * direct);
  }
}

TEST(PartitionGradient, UnknownIdentifierThrows) {
  model::ParamPartition part;
  part.cond_ids = {"a"};
  GradientVector g;
  g.add("a", Tensor::scalar(1.0));
  g.add("b", Tensor::scalar(1.0));
  EXPECT_THROW(model::partition_gradient(g, part), Error);
}

TEST(DenoiserModel, PartitionCoversEveryParameterOnce) {
  const model::DenoiserModel net(tiny_config(), limits(1, 1, 1, 1));
  const auto part = net.partition();
  const ParamSet p = net.init_params(0);
  EXPECT_EQ(part.cond_ids.size() + part.other_ids.size(), p.count());
  for (const auto& e : p.entries()) {
    EXPECT_NE(part.cond_ids.contains(e.id), part.other_ids.contains(e.id)) << e.id;
    const bool cond = e.id.starts_with("cond.") || e.id.find(".mod.") != std::string::npos;
    EXPECT_EQ(part.cond_ids.contains(e.id), cond) << e.id;
  }
}

TEST(DenoiserModel, InitialOutputIgnoresBlockInteriorWeights) {
  const model::DenoiserModel net(tiny_config(), limits(2, 2, 2, 2));
  ParamSet p = net.init_params(3);
  CounterRng rng(10);
  const Tensor x = random_tensor(rng, {6, 2});
  const std::vector<std::uint8_t> obs{1, 1, 0, 1, 0, 1};
  const Tensor cond = model::condition_features(x, obs, 4, 4);
  const Tensor before = net.predict(p, x, obs, cond);
  for (auto& e : p.entries()) {
    if (e.id.find(".attn.") != std::string::npos || e.id.find(".mlp.") != std::string::npos) {
      for (double& v : e.value.data) v += rng.normal();
    }
  }
  EXPECT_EQ(net.predict(p, x, obs, cond).data, before.data);
}

TEST(DenoiserModel, ForwardGradientMatchesFiniteDifferences) {
  for (auto op : kAllOps) {
    if (op == BoundOperator::hard_clamp || op == BoundOperator::clamp_ste) continue;  // kinks
    BoundConfig bc = limits(1.5, 1.2, 0.8, 0.6, op);
    const model::DenoiserModel net(tiny_config(), bc);
    CounterRng rng(11);
    ParamSet p = net.init_params(4);
    // Move away from the zero-gate initialization so every path carries gradient.
    for (auto& e : p.entries()) {
      for (double& v : e.value.data) v += 0.2 * rng.normal();
    }
    const Tensor x = random_tensor(rng, {6, 2});
    const std::vector<std::uint8_t> obs{1, 0, 1, 0, 0, 1};
    const Tensor cond = model::condition_features(x, obs, 7, 4);
    const ad::LossGraph graph = [&](ad::Tape& t, const ParamSet& ps) {
      return ad::sum_squares(net.forward(t, ps, x, obs, cond));
    };
    EXPECT_LE(ad::max_relative_error(ad::gradient(graph, p), ad::finite_diff(graph, p, 1e-5), 1e-5), 1e-4)
        << model::to_string(op);
  }
}

TEST(DenoiserModel, TraceReportsBoundedMagnitudes) {
  const BoundConfig bc = limits(0.5, 0.4, 0.3, 0.2);
  const model::DenoiserModel net(tiny_config(), bc);
  CounterRng rng(12);
  ParamSet p = net.init_params(5);
  for (auto& e : p.entries()) {
    for (double& v : e.value.data) v += rng.normal();
  }
  const Tensor x = random_tensor(rng, {6, 2}, 3.0);
  const std::vector<std::uint8_t> obs{1, 0, 1, 0, 0, 1};
  ad::Tape tape;
  model::ConditionTrace trace;
  net.forward(tape, p, x, obs, model::condition_features(x, obs, 2, 4), &trace);
  ASSERT_EQ(trace.gamma_abs.size(), 2u);
  EXPECT_GT(trace.cond_norm, 0.5);  // reported before projection
  for (std::size_t b = 0; b < 2; ++b) {
    EXPECT_LE(trace.gamma_abs[b], 0.4);
    EXPECT_LE(trace.beta_abs[b], 0.3);
    EXPECT_LE(trace.alpha_abs[b], 0.2);
  }
}

TEST(DenoiserModel, RejectsMismatchedShapes) {
  const model::DenoiserModel net(tiny_config(), limits(1, 1, 1, 1));
  const ParamSet p = net.init_params(0);
  const Tensor x({6, 2});
  const std::vector<std::uint8_t> obs(6, 1);
  EXPECT_THROW(net.predict(p, Tensor({5, 2}), obs, model::condition_features(x, obs, 0, 4)), Error);
  EXPECT_THROW(net.predict(p, x, std::vector<std::uint8_t>(5, 1), model::condition_features(x, obs, 0, 4)), Error);
  EXPECT_THROW(net.predict(p, x, obs, Tensor({3})), Error);
}

TEST(ModelConfigValidation, HiddenMustDivideHeads) {
  model::ModelConfig c = tiny_config();
  c.heads = 3;
  EXPECT_THROW(c.validate(), Error);
  c = tiny_config();
  c.depth = 0;
  EXPECT_THROW(c.validate(), Error);
  EXPECT_NO_THROW(model::ModelConfig::desk().validate());
  EXPECT_NO_THROW(model::ModelConfig::paper().validate());
}
