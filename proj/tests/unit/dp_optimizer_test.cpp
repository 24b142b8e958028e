#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "dpadaln/dp_optimizer.hpp"

using namespace dpadaln;
using namespace dpadaln::dp;

namespace {

GradientVector make_grad(std::vector<double> a, std::vector<double> b) {
  GradientVector g;
  const std::size_t na = a.size(), nb = b.size();
  g.add("w", Tensor({na}, std::move(a)));
  g.add("b", Tensor({nb}, std::move(b)));
  return g;
}

GradientVector random_grad(CounterRng& rng, double scale) {
  std::vector<double> a(5), b(3);
  for (double& v : a) v = scale * rng.normal();
  for (double& v : b) v = scale * rng.normal();
  return make_grad(a, b);
}

// Independent Gaussian stream: splitmix64 on a counter, Box-Muller pairs (cos first, then sin).
struct ReferenceGaussian {
  std::uint64_t key, counter = 0;
  bool spare_ready = false;
  double spare = 0.0;

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
  ReferenceGaussian(std::uint64_t seed, std::uint64_t stream)
      : key(mix(seed ^ mix(stream + 0x9E3779B97F4A7C15ULL))) {}
  double u() { return static_cast<double>(mix(key + ++counter * 0x9E3779B97F4A7C15ULL) >> 11) / 9007199254740992.0; }
  double next() {
    if (spare_ready) {
      spare_ready = false;
      return spare;
    }
    const double u1 = 1.0 - u(), u2 = u();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare = r * std::sin(2.0 * std::numbers::pi * u2);
    spare_ready = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }
};

ParamSet scalar_param(double x) {
  ParamSet p;
  p.add("x", Tensor({1}, {x}));
  return p;
}

GradientVector scalar_grad(double g) {
  GradientVector u;
  u.add("x", Tensor({1}, {g}));
  return u;
}

}  // namespace

TEST(ClipGradient, Examples) {
  const auto small = make_grad({0.3, 0.0}, {0.4});
  const auto r1 = clip_gradient(small, 1.0);
  EXPECT_EQ(r1.eta, 1.0);
  EXPECT_NEAR(r1.norm, 0.5, 1e-15);
  EXPECT_TRUE(r1.clipped == small);

  const auto big = make_grad({1.2, 0.0}, {1.6});
  const auto r2 = clip_gradient(big, 1.0);
  EXPECT_NEAR(r2.eta, 0.5, 1e-15);
  EXPECT_NEAR(r2.clipped.norm(), 1.0, 1e-15);

  const auto exact = make_grad({0.6, 0.0}, {0.8});
  EXPECT_EQ(clip_gradient(exact, exact.norm()).eta, 1.0);

  const auto zero = make_grad({0.0, 0.0}, {0.0});
  EXPECT_EQ(clip_gradient(zero, 1.0).eta, 1.0);
  EXPECT_THROW(clip_gradient(zero, 0.0), Error);
}

TEST(ClipGradient, NormBoundAndMonotoneEta) {
  CounterRng rng(1);
  for (int i = 0; i < 2000; ++i) {
    const double C = 0.01 + 5.0 * rng.uniform();
    const auto g = random_grad(rng, std::exp(6.0 * rng.uniform() - 3.0));
    const auto r = clip_gradient(g, C);
    EXPECT_LE(r.clipped.norm(), C + 1e-12);
    if (g.norm() <= C) EXPECT_EQ(r.eta, 1.0);
    // Scaling g up never increases eta.
    GradientVector g2 = g;
    g2.scale(1.0 + rng.uniform());
    EXPECT_LE(clip_gradient(g2, C).eta, r.eta + 1e-15);
  }
}

TEST(PrivatizeBatch, NoiselessExamples) {
  CounterRng rng(2);
  DPConfig cfg{1.0, 0.0, 2};
  const auto zero = make_grad({0, 0}, {0});
  EXPECT_EQ(privatize_batch({zero, zero}, cfg, rng).norm(), 0.0);
  const auto g = make_grad({0.1, -0.2}, {0.3});
  const auto out = privatize_batch({g, g}, cfg, rng);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(out.flatten()[i], g.flatten()[i], 1e-16);
  EXPECT_THROW(privatize_batch({}, cfg, rng), Error);
  EXPECT_THROW(privatize_batch({g, make_grad({1}, {1})}, cfg, rng), Error);
}

TEST(PrivatizeBatch, ClipRecordsAndClippedMean) {
  CounterRng rng(3);
  const auto a = make_grad({3, 0}, {4});       // norm 5 -> eta 0.2
  const auto b = make_grad({0.1, 0.1}, {0.1});  // inside the ball
  std::vector<ClipRecord> rec;
  const auto out = privatize_batch({a, b}, DPConfig{1.0, 0.0, 2}, rng, &rec);
  ASSERT_EQ(rec.size(), 2u);
  EXPECT_NEAR(rec[0].eta, 0.2, 1e-15);
  EXPECT_NEAR(rec[0].norm, 5.0, 1e-15);
  EXPECT_EQ(rec[1].eta, 1.0);
  const auto f = out.flatten();
  EXPECT_NEAR(f[0], (0.6 + 0.1) / 2, 1e-15);
  EXPECT_NEAR(f[1], (0.0 + 0.1) / 2, 1e-15);
  EXPECT_NEAR(f[2], (0.8 + 0.1) / 2, 1e-15);
}

TEST(PrivatizeBatch, NoiseMatchesReferenceStream) {
  CounterRng setup(4);
  std::vector<GradientVector> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(random_grad(setup, 1.5));
  const DPConfig cfg{1.0, 0.05, 4};
  CounterRng rng(77, 3);
  const auto out = privatize_batch(batch, cfg, rng).flatten();

  ReferenceGaussian ref(77, 3);
  std::vector<double> expect(8, 0.0);
  for (const auto& g : batch) {
    const auto f = g.flatten();
    double n = 0.0;
    for (double v : f) n += v * v;
    const double eta = std::min(1.0, 1.0 / std::sqrt(n));
    for (std::size_t i = 0; i < 8; ++i) expect[i] += eta * f[i];
  }
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(out[i], (expect[i] + 0.05 * ref.next()) / 4.0, 1e-15) << i;
}

TEST(PrivatizeBatch, PermutationInvariantWithoutNoise) {
  CounterRng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<GradientVector> batch;
    for (int i = 0; i < 16; ++i) batch.push_back(random_grad(rng, std::exp(8.0 * rng.uniform() - 4.0)));
    const DPConfig cfg{1.0, 0.0, 16};
    const auto a = privatize_batch(batch, cfg, rng).flatten();
    std::reverse(batch.begin(), batch.end());
    std::rotate(batch.begin(), batch.begin() + 5, batch.end());
    const auto b = privatize_batch(batch, cfg, rng).flatten();
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  }
}

TEST(PrivatizeBatch, NoiseStandardDeviation) {
  CounterRng rng(6), setup(7);
  const double C = 0.7, sigma = 1.3;
  std::vector<GradientVector> batch;
  for (int i = 0; i < 3; ++i) {
    std::vector<double> a(5), b(3);
    for (double& v : a) v = setup.normal();
    for (double& v : b) v = setup.normal();
    batch.push_back(make_grad(a, b));
  }
  const DPConfig clean{C, 0.0, 3}, noisy{C, sigma, 3};
  const auto base = privatize_batch(batch, clean, rng).flatten();
  const int draws = 10000;
  std::vector<double> sum(8, 0.0), sum2(8, 0.0);
  for (int d = 0; d < draws; ++d) {
    const auto out = privatize_batch(batch, noisy, rng).flatten();
    for (std::size_t i = 0; i < 8; ++i) {
      const double z = 3.0 * (out[i] - base[i]);
      sum[i] += z;
      sum2[i] += z * z;
    }
  }
  for (std::size_t i = 0; i < 8; ++i) {
    const double m = sum[i] / draws;
    const double sd = std::sqrt(sum2[i] / draws - m * m);
    EXPECT_NEAR(sd, sigma * C, 0.03 * sigma * C) << "coordinate " << i;
  }
}

TEST(DPConfig, Validation) {
  EXPECT_NO_THROW((DPConfig{1.0, 0.0, 1}.validate()));
  EXPECT_NO_THROW((DPConfig{std::numeric_limits<double>::infinity(), 0.0, 1}.validate()));
  EXPECT_THROW((DPConfig{0.0, 0.0, 1}.validate()), Error);
  EXPECT_THROW((DPConfig{1.0, -0.1, 1}.validate()), Error);
  EXPECT_THROW((DPConfig{1.0, 0.1, 0}.validate()), Error);
  EXPECT_THROW((DPConfig{std::numeric_limits<double>::infinity(), 0.1, 1}.validate()), Error);
}

TEST(SensitivityProbe, Examples) {
  const DPConfig cfg{1.0, 0.0, 1};
  const auto g = make_grad({0.3, 0.0}, {0.4});
  const auto zero = make_grad({0, 0}, {0});
  EXPECT_EQ(sensitivity_probe({g}, {g}, cfg), 0.0);
  EXPECT_NEAR(sensitivity_probe({g}, {zero}, cfg), 0.5, 1e-15);
  EXPECT_THROW(sensitivity_probe({g, g}, {zero, zero}, cfg), Error);
  EXPECT_THROW(sensitivity_probe({g}, {g, g}, cfg), Error);
}

TEST(SensitivityProbe, NeverExceedsReplacementBound) {
  CounterRng rng(8);
  const std::size_t B = 4;
  for (double C : {0.1, 1.0, 3.0}) {
    const DPConfig cfg{C, 0.0, B};
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<GradientVector> d;
      for (std::size_t i = 0; i < B; ++i) d.push_back(random_grad(rng, std::exp(4.0 * rng.uniform() - 2.0)));
      // Enumerate every neighbour that replaces one slot.
      for (std::size_t slot = 0; slot < B; ++slot) {
        auto dp = d;
        dp[slot] = random_grad(rng, std::exp(4.0 * rng.uniform() - 2.0));
        worst = std::max(worst, sensitivity_probe(d, dp, cfg));
      }
    }
    EXPECT_LE(worst, 2.0 * C / B + 1e-9);
    // Large random gradients point in different directions, so the bound is approached but not attained.
    EXPECT_GT(worst, 0.5 * C / B);
  }
  // Antipodal replacement attains 2C/B.
  const auto g = make_grad({10, 0}, {0});
  const auto h = make_grad({-10, 0}, {0});
  const auto z = make_grad({0, 0}, {0});
  EXPECT_NEAR(sensitivity_probe({g, z}, {h, z}, DPConfig{1.0, 0.0, 2}), 1.0, 1e-15);
}

TEST(OptimizerSettings, WarmupRamp) {
  OptimizerSettings s;
  s.lr = 7e-4;
  s.warmup_steps = 1000;
  EXPECT_DOUBLE_EQ(s.lr_at(500), 0.5 * 7e-4);
  EXPECT_DOUBLE_EQ(s.lr_at(1000), 7e-4);
  EXPECT_DOUBLE_EQ(s.lr_at(5000), 7e-4);
  EXPECT_DOUBLE_EQ(s.lr_at(1), 7e-7);
  s.warmup_steps = 0;
  EXPECT_DOUBLE_EQ(s.lr_at(1), 7e-4);
  s.lr = 0.0;
  EXPECT_THROW(s.validate(), Error);
}

TEST(OptimizerStep, ZeroUpdateWithoutDecayKeepsParams) {
  OptimizerSettings s;
  s.weight_decay = 0.0;
  s.warmup_steps = 0;
  ParamSet p = scalar_param(1.25);
  auto st = OptimState::init(p, s);
  for (int i = 0; i < 5; ++i) optimizer_step(p, scalar_grad(0.0), st);
  EXPECT_EQ(p.at("x")[0], 1.25);
  EXPECT_EQ(st.ema.at("x")[0], 1.25);
  EXPECT_EQ(st.step, 5u);
}

TEST(OptimizerStep, HandEvaluatedTwoSteps) {
  OptimizerSettings s;
  s.lr = 0.1;
  s.weight_decay = 0.01;
  s.warmup_steps = 0;
  s.beta1 = 0.9;
  s.beta2 = 0.999;
  s.eps = 1e-8;
  s.ema_decay = 0.5;
  ParamSet p = scalar_param(2.0);
  auto st = OptimState::init(p, s);

  optimizer_step(p, scalar_grad(0.5), st);
  // Step 1: m = 0.05, v = 0.00025, mhat = 0.5, vhat = 0.25.
  double x = 2.0 * (1.0 - 0.1 * 0.01);
  x -= 0.1 * 0.5 / (0.5 + 1e-8);
  EXPECT_NEAR(p.at("x")[0], x, 1e-15);
  EXPECT_NEAR(st.ema.at("x")[0], 0.5 * 2.0 + 0.5 * x, 1e-15);

  optimizer_step(p, scalar_grad(-1.0), st);
  const double m = 0.9 * 0.05 + 0.1 * -1.0;
  const double v = 0.999 * 0.00025 + 0.001 * 1.0;
  const double mhat = m / (1.0 - 0.81), vhat = v / (1.0 - 0.999 * 0.999);
  const double x2 = x * (1.0 - 0.001) - 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
  EXPECT_NEAR(p.at("x")[0], x2, 1e-14);
  EXPECT_EQ(st.step, 2u);
}

TEST(OptimizerStep, RejectsNonFiniteUpdateAndLeavesStateUntouched) {
  OptimizerSettings s;
  ParamSet p = scalar_param(1.0);
  auto st = OptimState::init(p, s);
  optimizer_step(p, scalar_grad(0.3), st);
  const ParamSet before = p;
  const auto m = st.m;
  EXPECT_THROW(optimizer_step(p, scalar_grad(std::nan("")), st), Error);
  EXPECT_THROW(optimizer_step(p, scalar_grad(std::numeric_limits<double>::infinity()), st), Error);
  EXPECT_TRUE(p == before);
  EXPECT_TRUE(st.m == m);
  EXPECT_EQ(st.step, 1u);
  GradientVector wrong;
  wrong.add("y", Tensor({1}, {0.0}));
  EXPECT_THROW(optimizer_step(p, wrong, st), Error);
}
