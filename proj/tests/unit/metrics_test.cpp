#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "dpadaln/metrics.hpp"
#include "dpadaln/rng.hpp"

using namespace dpadaln;
using namespace dpadaln::metrics;

namespace {

std::vector<double> sample(CounterRng& rng, std::size_t n, double shift = 0.0, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = shift + scale * rng.normal();
  return v;
}

double mmd_double_sum(const std::vector<double>& x, const std::vector<double>& y, double h) {
  const auto k = [h](double a, double b) { return std::exp(-(a - b) * (a - b) / (2.0 * h * h)); };
  double xx = 0.0, yy = 0.0, xy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (i != j) xx += k(x[i], x[j]);
    }
  }
  for (std::size_t i = 0; i < y.size(); ++i) {
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (i != j) yy += k(y[i], y[j]);
    }
  }
  for (double a : x) {
    for (double b : y) xy += k(a, b);
  }
  const double m = static_cast<double>(x.size()), n = static_cast<double>(y.size());
  const double mmd2 = xx / (m * (m - 1)) + yy / (n * (n - 1)) - 2.0 * xy / (m * n);
  return std::sqrt(std::max(0.0, mmd2));
}

std::vector<double> rotate(std::vector<double> v, std::size_t s) {
  std::rotate(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(s), v.end());
  return v;
}

}  // namespace

TEST(PointMetrics, Examples) {
  const std::vector<double> t{1.0, -2.0, 3.0, 4.5};
  const auto perfect = point_metrics(t, t);
  EXPECT_EQ(perfect.rmse, 0.0);
  EXPECT_EQ(perfect.mae, 0.0);
  EXPECT_EQ(perfect.mape, 0.0);
  EXPECT_EQ(perfect.r2, 1.0);

  const double mean = (1.0 - 2.0 + 3.0 + 4.5) / 4.0;
  EXPECT_NEAR(point_metrics(std::vector<double>(4, mean), t).r2, 0.0, 1e-15);

  std::vector<double> shifted = t;
  for (double& v : shifted) v += 1.0;
  const auto off = point_metrics(shifted, t);
  EXPECT_DOUBLE_EQ(off.rmse, 1.0);
  EXPECT_DOUBLE_EQ(off.mae, 1.0);
  EXPECT_NEAR(off.mape, 100.0 * (1.0 + 0.5 + 1.0 / 3.0 + 1.0 / 4.5) / 4.0, 1e-12);
}

TEST(PointMetrics, MapeSkipsNearZeroTargetsAndErrors) {
  const auto m = point_metrics(std::vector<double>{1.0, 3.0}, std::vector<double>{0.0, 2.0});
  EXPECT_DOUBLE_EQ(m.mape, 50.0);
  EXPECT_THROW(point_metrics(std::vector<double>{}, std::vector<double>{}), Error);
  EXPECT_THROW(point_metrics(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}), Error);
}

TEST(PointMetrics, WindowFormUsesMaskedRowsOnly) {
  const Tensor target = Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6});
  const Tensor pred = Tensor::matrix(3, 2, {100, 100, 4, 5, 5, 6});
  const auto m = point_metrics(pred, target, {1, 0, 0});
  EXPECT_DOUBLE_EQ(m.mae, 0.5);
  EXPECT_DOUBLE_EQ(m.rmse, std::sqrt(0.5));
  EXPECT_THROW(point_metrics(pred, target, {1, 1, 1}), Error);
}

TEST(HistDivergences, IdenticalAndDisjoint) {
  CounterRng rng(1);
  const auto x = sample(rng, 500);
  const auto same = hist_divergences(x, x);
  EXPECT_NEAR(same.kl, 0.0, 1e-9);
  EXPECT_NEAR(same.js, 0.0, 1e-9);

  std::vector<double> lo(100), hi(100);
  for (std::size_t i = 0; i < 100; ++i) {
    lo[i] = 0.01 * static_cast<double>(i);
    hi[i] = 10.0 + 0.01 * static_cast<double>(i);
  }
  EXPECT_NEAR(hist_divergences(lo, hi).js, std::numbers::ln2, 1e-3);
  EXPECT_THROW(hist_divergences({}, x), Error);
}

TEST(HistDivergences, ThreeBinHandComputation) {
  // Union range [0, 2] in three bins: p = (1/4, 1/4, 1/2), q = (1/2, 1/4, 1/4).
  const std::vector<double> p{0.0, 1.0, 2.0, 2.0}, q{0.0, 0.0, 1.0, 2.0};
  const auto d = hist_divergences(p, q, 3);
  EXPECT_NEAR(d.kl, 0.25 * std::log(0.5) + 0.5 * std::log(2.0), 1e-9);
  EXPECT_NEAR(d.js, 0.25 * std::log(2.0 / 3.0) + 0.5 * std::log(4.0 / 3.0), 1e-9);
}

TEST(HistDivergences, JsSymmetricAndBounded) {
  CounterRng rng(2);
  for (int i = 0; i < 100; ++i) {
    const auto a = sample(rng, 50 + rng.index(200), 3.0 * rng.normal(), 0.1 + rng.uniform());
    const auto b = sample(rng, 50 + rng.index(200), 3.0 * rng.normal(), 0.1 + rng.uniform());
    const auto ab = hist_divergences(a, b), ba = hist_divergences(b, a);
    EXPECT_NEAR(ab.js, ba.js, 1e-12);
    EXPECT_GE(ab.js, 0.0);
    EXPECT_LE(ab.js, std::numbers::ln2 + 1e-9);
    EXPECT_GE(ab.kl, 0.0);
  }
}

TEST(WsKs, Examples) {
  const auto same = ws_ks({1.0, 2.0, 3.0}, {3.0, 1.0, 2.0});
  EXPECT_EQ(same.ws, 0.0);
  EXPECT_EQ(same.ks, 0.0);
  const auto unit = ws_ks({0.0}, {1.0});
  EXPECT_EQ(unit.ws, 1.0);
  EXPECT_EQ(unit.ks, 1.0);
  EXPECT_DOUBLE_EQ(ws_ks({0.0, 1.0}, {0.5, 1.5}).ws, 0.5);
  // Unequal sizes: quantile functions of {0} and {0, 2} differ by 2 on half the mass.
  EXPECT_DOUBLE_EQ(ws_ks({0.0}, {0.0, 2.0}).ws, 1.0);
  EXPECT_DOUBLE_EQ(ws_ks({0.0}, {0.0, 2.0}).ks, 0.5);
  EXPECT_THROW(ws_ks({}, {1.0}), Error);
}

TEST(WsKs, SortedDifferenceOracleSymmetryAndTriangle) {
  CounterRng rng(3);
  for (int i = 0; i < 200; ++i) {
    const std::size_t n = 1 + rng.index(60);
    auto a = sample(rng, n, rng.normal()), b = sample(rng, n, rng.normal(), 2.0), c = sample(rng, n);
    auto sa = a, sb = b;
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    double oracle = 0.0;
    for (std::size_t j = 0; j < n; ++j) oracle += std::abs(sa[j] - sb[j]);
    oracle /= static_cast<double>(n);
    const auto ab = ws_ks(a, b), ba = ws_ks(b, a);
    EXPECT_NEAR(ab.ws, oracle, 1e-12);
    EXPECT_NEAR(ab.ws, ba.ws, 1e-12);
    EXPECT_EQ(ab.ks, ba.ks);
    EXPECT_LE(ab.ws, ws_ks(a, c).ws + ws_ks(c, b).ws + 1e-9);
  }
}

TEST(Mmd, Examples) {
  const std::vector<double> x{0.1, -0.4, 1.3, 0.7};
  EXPECT_NEAR(mmd_rbf(x, {1.3, 0.1, 0.7, -0.4}, 0.5), 0.0, 1e-9);
  EXPECT_NEAR(mmd_rbf(x, {5.0, 6.0, 7.0}, 1e9), 0.0, 1e-6);
  const std::vector<double> a{0.0, 1.0, 2.5}, b{0.3, -1.0, 4.0};
  EXPECT_NEAR(mmd_rbf(a, b, 0.8), mmd_double_sum(a, b, 0.8), 1e-12);
  EXPECT_THROW(mmd_rbf({1.0}, a, 1.0), Error);
  EXPECT_THROW(mmd_rbf(a, b, 0.0), Error);
}

TEST(Mmd, MatchesDoubleSumAndIsSymmetric) {
  CounterRng rng(4);
  for (int i = 0; i < 100; ++i) {
    const auto a = sample(rng, 2 + rng.index(40), rng.normal());
    const auto b = sample(rng, 2 + rng.index(40), rng.normal(), 1.5);
    const double h = 0.1 + 2.0 * rng.uniform();
    EXPECT_NEAR(mmd_rbf(a, b, h), mmd_double_sum(a, b, h), 1e-12);
    EXPECT_NEAR(mmd_rbf(a, b, h), mmd_rbf(b, a, h), 1e-12);
  }
}

TEST(Mmd, MedianBandwidth) {
  // Pooled {0, 1, 3}: pairwise distances 1, 2, 3.
  EXPECT_DOUBLE_EQ(median_bandwidth({0.0, 1.0}, {3.0}), 2.0);
}

TEST(SpectralDistance, FourPointHandDft) {
  // {1,0,0,0}: flat periodogram (1/4 each). {1,1,1,1}: all power at DC. {1,0,-1,0}: power split between bins 1 and 3.
  EXPECT_NEAR(spectral_distance({1, 0, 0, 0}, {1, 1, 1, 1}), (0.75 * 0.75 + 3 * 0.25 * 0.25) / 4.0, 1e-15);
  EXPECT_NEAR(spectral_distance({1, 0, 0, 0}, {1, 0, -1, 0}), 0.0625, 1e-15);
  EXPECT_NEAR(spectral_distance({1, 1, 1, 1}, {1, 0, -1, 0}), (1.0 + 0.25 + 0.25) / 4.0, 1e-15);
  EXPECT_EQ(spectral_distance({1, 2, 3, 4}, {1, 2, 3, 4}), 0.0);
  EXPECT_THROW(spectral_distance({1, 2, 3, 4}, {1, 2, 3}), Error);
  EXPECT_THROW(spectral_distance({1, 2, 3}, {1, 2, 3}), Error);
}

TEST(SpectralDistance, CircularShiftInvariantAndSymmetric) {
  CounterRng rng(5);
  for (int i = 0; i < 100; ++i) {
    const std::size_t L = 4 + rng.index(40);
    const auto a = sample(rng, L), b = sample(rng, L);
    const double d = spectral_distance(a, b);
    EXPECT_NEAR(spectral_distance(rotate(a, rng.index(L)), b), d, 1e-12);
    EXPECT_NEAR(spectral_distance(a, rotate(b, rng.index(L))), d, 1e-12);
    EXPECT_NEAR(spectral_distance(b, a), d, 1e-15);
    EXPECT_NEAR(spectral_distance(a, rotate(a, rng.index(L))), 0.0, 1e-12);
  }
}

TEST(MetricAccumulator, PoolsWindowsAndAveragesSpectra) {
  CounterRng rng(6);
  Tensor t1({8, 2}), t2({8, 2}), p1({8, 2}), p2({8, 2});
  for (auto* t : {&t1, &t2, &p1, &p2}) {
    for (double& v : t->data) v = rng.normal();
  }
  const std::vector<std::uint8_t> m1{1, 1, 0, 0, 0, 1, 1, 1}, m2{0, 1, 0, 1, 0, 1, 0, 1};
  MetricAccumulator acc;
  acc.add_window(p1, t1, m1);
  acc.add_window(p2, t2, m2);
  const auto r = acc.finish();
  EXPECT_EQ(r.windows, 2u);
  EXPECT_EQ(r.values, (3u + 4u) * 2u);

  std::vector<double> pp, tt;
  for (const auto& [p, t, m] : {std::tuple{&p1, &t1, &m1}, std::tuple{&p2, &t2, &m2}}) {
    for (std::size_t i = 0; i < 8; ++i) {
      if ((*m)[i]) continue;
      for (std::size_t k = 0; k < 2; ++k) {
        pp.push_back((*p)(i, k));
        tt.push_back((*t)(i, k));
      }
    }
  }
  const auto pm = point_metrics(pp, tt);
  EXPECT_NEAR(r.point.rmse, pm.rmse, 1e-12);
  EXPECT_NEAR(r.point.mae, pm.mae, 1e-12);
  EXPECT_NEAR(r.ws, ws_ks(pp, tt).ws, 1e-12);
  EXPECT_NEAR(r.spectral_dist, 0.5 * (spectral_distance(p1, t1) + spectral_distance(p2, t2)), 1e-12);
  EXPECT_GE(r.mmd, 0.0);

  const std::string row = r.csv_row(), header = MetricReport::csv_header();
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), std::count(header.begin(), header.end(), ','));
  EXPECT_THROW(MetricAccumulator{}.finish(), Error);
}
