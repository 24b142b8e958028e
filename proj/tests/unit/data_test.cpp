#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "dpadaln/data.hpp"
#include "dpadaln/rng.hpp"

using namespace dpadaln;
using namespace dpadaln::data;

namespace {

std::vector<std::pair<std::size_t, std::size_t>> masked_runs(const MaskSpec& m) {
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  for (std::size_t i = 0; i < m.length();) {
    if (m.bits[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < m.length() && !m.bits[j]) ++j;
    runs.emplace_back(i, j - i);
    i = j;
  }
  return runs;
}

double sorted_quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

TEST(RandomMask, Counts) {
  CounterRng rng(1);
  EXPECT_EQ(random_mask(10, 0.5, rng).masked_count(), 5u);
  EXPECT_EQ(random_mask(10, 0.1, rng).masked_count(), 1u);
  EXPECT_EQ(random_mask(168, 0.3, rng).masked_count(), 50u);
  EXPECT_THROW(random_mask(10, 0.0, rng), Error);
  EXPECT_THROW(random_mask(10, 1.0, rng), Error);
  EXPECT_THROW(random_mask(3, 0.1, rng), Error);
}

TEST(RandomMask, DeterministicGivenSeed) {
  CounterRng a(5, 1), b(5, 1), c(6, 1);
  const auto ma = random_mask(40, 0.3, a);
  EXPECT_EQ(ma.bits, random_mask(40, 0.3, b).bits);
  EXPECT_NE(ma.bits, random_mask(40, 0.3, c).bits);
}

TEST(RandomMask, PositionsAreUniform) {
  CounterRng rng(2);
  std::vector<int> hits(10, 0);
  const int n = 20000;
  for (int r = 0; r < n; ++r) {
    const auto m = random_mask(10, 0.3, rng);
    for (std::size_t i = 0; i < 10; ++i) hits[i] += m.bits[i] == 0;
  }
  // Each position is masked with probability 0.3; binomial std ~ 65.
  for (int h : hits) EXPECT_NEAR(h, 0.3 * n, 400);
}

TEST(BlockMask, Examples) {
  const auto m = block_mask(168, 24);
  EXPECT_EQ(m.masked_count(), 24u);
  for (std::size_t i = 0; i < 168; ++i) EXPECT_EQ(m.bits[i], i < 144 ? 1 : 0);
  EXPECT_EQ(block_mask(5, 1).bits, (std::vector<std::uint8_t>{1, 1, 1, 1, 0}));
  EXPECT_THROW(block_mask(5, 0), Error);
  EXPECT_THROW(block_mask(5, 5), Error);
}

TEST(StrideMask, FourBlocksOfThreeInTwentyFour) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CounterRng rng(seed);
    const auto m = stride_mask(24, 4, rng);
    const auto runs = masked_runs(m);
    ASSERT_EQ(runs.size(), 4u) << "seed " << seed;
    for (std::size_t b = 0; b < 4; ++b) {
      EXPECT_EQ(runs[b].second, 3u);
      EXPECT_EQ(runs[b].first - runs[0].first, 6 * b);
    }
    EXPECT_LE(runs[0].first, 3u);
  }
}

TEST(StrideMask, SingleBlockAndErrors) {
  CounterRng rng(3);
  const auto runs = masked_runs(stride_mask(10, 1, rng));
  ASSERT_EQ(runs.size(), 1u);
  EXPECT_EQ(runs[0].second, 5u);
  EXPECT_THROW(stride_mask(10, 6, rng), Error);
  EXPECT_THROW(stride_mask(10, 0, rng), Error);
}

TEST(StrideMask, DisjointEqualBlocksForAllValidInputs) {
  CounterRng rng(4);
  for (std::size_t L = 2; L <= 60; ++L) {
    for (std::size_t nb = 1; 2 * nb <= L; ++nb) {
      const auto m = stride_mask(L, nb, rng);
      const auto runs = masked_runs(m);
      const std::size_t len = L / (2 * nb);
      EXPECT_EQ(m.masked_count(), nb * len);
      // Adjacent blocks never merge because the stride leaves a gap of at least len.
      ASSERT_EQ(runs.size(), nb) << L << " " << nb;
      for (const auto& r : runs) EXPECT_EQ(r.second, len);
    }
  }
}

TEST(MaskSpec, ValidityInvariant) {
  CounterRng rng(5);
  for (int i = 0; i < 300; ++i) {
    const std::size_t L = 10 + rng.index(60);
    const MaskSpec m = i % 3 == 0   ? random_mask(L, 0.1 + 0.4 * rng.uniform(), rng)
                       : i % 3 == 1 ? block_mask(L, 1 + rng.index(L - 1))
                                    : stride_mask(L, 1 + rng.index(L / 2), rng);
    EXPECT_GT(m.masked_count(), 0u);
    EXPECT_LT(m.masked_count(), L);
    EXPECT_NO_THROW(m.validate());
  }
  MaskSpec all_observed{std::vector<std::uint8_t>(5, 1)};
  EXPECT_THROW(all_observed.validate(), Error);
  MaskSpec all_masked{std::vector<std::uint8_t>(5, 0)};
  EXPECT_THROW(all_masked.validate(), Error);
}

TEST(MaskKind, ParseRoundTrip) {
  for (auto k : {MaskKind::random, MaskKind::block, MaskKind::stride}) EXPECT_EQ(parse_mask_kind(to_string(k)), k);
  EXPECT_THROW(parse_mask_kind("suffix"), Error);
}

TEST(WindowDataset, Counts) {
  Series s{Tensor({192, 2}), {"a", "b"}};
  for (std::size_t i = 0; i < 192; ++i) s.values(i, 0) = static_cast<double>(i);
  const auto w = window_dataset(s, 168, 24);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w[1].origin, 24u);
  EXPECT_EQ(w[1].values(0, 0), 24.0);
  EXPECT_EQ(w[1].values(167, 0), 191.0);
  EXPECT_EQ(window_dataset(s.rows(0, 168), 168, 24).size(), 1u);
  EXPECT_EQ(window_dataset(s, 24, 24).size(), 8u);
  EXPECT_EQ(window_dataset(s, 10, 7).size(), (192u - 10u) / 7u + 1u);
  EXPECT_THROW(window_dataset(s.rows(0, 100), 168, 24), Error);
  EXPECT_THROW(window_dataset(s, 24, 0), Error);
}

TEST(NormStats, RoundTripAndTrainingStatistics) {
  CounterRng rng(6);
  Series s = synth_series(500, 3, 0.02, 8.0, rng);
  const auto st = NormStats::fit(s);
  const Tensor z = st.normalize(s.values);
  for (std::size_t k = 0; k < 3; ++k) {
    double m = 0.0, v = 0.0;
    for (std::size_t t = 0; t < 500; ++t) m += z(t, k);
    m /= 500.0;
    for (std::size_t t = 0; t < 500; ++t) v += (z(t, k) - m) * (z(t, k) - m);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 500.0, 1.0, 1e-12);
  }
  const Tensor back = st.denormalize(z);
  for (std::size_t i = 0; i < back.size(); ++i) EXPECT_NEAR(back[i], s.values[i], 1e-10);
}

TEST(NormStats, RejectsConstantChannelAndMismatch) {
  Series s{Tensor({4, 2}, {1, 5, 2, 5, 3, 5, 4, 5}), {"x", "flat"}};
  EXPECT_THROW(NormStats::fit(s), Error);
  NormStats st{{0.0}, {1.0}};
  EXPECT_THROW(st.normalize(Tensor({2, 2})), Error);
}

TEST(SynthSeries, ShapeFiniteAndDeterministic) {
  CounterRng a(7), b(7);
  const auto s = synth_series(300, 4, 0.05, 6.0, a);
  EXPECT_EQ(s.length(), 300u);
  EXPECT_EQ(s.channels(), 4u);
  EXPECT_EQ(s.channel_names.front(), "target");
  for (double v : s.values.data) EXPECT_TRUE(std::isfinite(v));
  EXPECT_EQ(s.values.data, synth_series(300, 4, 0.05, 6.0, b).values.data);
}

TEST(SynthSeries, BurstsAreWholeRegionShiftsOfRareScale) {
  for (double scale : {1.0, 8.0}) {
    CounterRng a(8), b(8);
    const auto clean = synth_series(24 * 400, 3, 0.0, scale, a);
    const auto bursty = synth_series(24 * 400, 3, 0.1, scale, b);
    std::size_t bursts = 0;
    for (std::size_t r = 0; r < 400; ++r) {
      std::set<std::size_t> channels;
      for (std::size_t t = r * 24; t < (r + 1) * 24; ++t) {
        EXPECT_EQ(bursty.values(t, 0), clean.values(t, 0));
        for (std::size_t k = 1; k < 3; ++k) {
          const double d = bursty.values(t, k) - clean.values(t, k);
          if (d == 0.0) continue;
          EXPECT_NEAR(std::abs(d), scale, 1e-12);
          channels.insert(k);
        }
      }
      EXPECT_LE(channels.size(), 1u);
      bursts += channels.size();
    }
    // 400 regions at p = 0.1: expect 40, binomial std 6.
    EXPECT_GT(bursts, 15u);
    EXPECT_LT(bursts, 70u);
  }
}

TEST(SynthSeries, BurstsFattenTheCovariateTail) {
  const std::size_t windows = 10000, L = 24;
  auto ratio = [&](double prob) {
    CounterRng rng(9);
    const auto s = synth_series(windows * L, 3, prob, 8.0, rng);
    std::vector<double> mag(windows);
    for (std::size_t w = 0; w < windows; ++w) {
      double m = 0.0;
      for (std::size_t t = w * L; t < (w + 1) * L; ++t) {
        for (std::size_t k = 1; k < 3; ++k) m = std::max(m, std::abs(s.values(t, k)));
      }
      mag[w] = m;
    }
    return sorted_quantile(mag, 0.99) / sorted_quantile(mag, 0.5);
  };
  const double with_bursts = ratio(0.02), without = ratio(0.0);
  EXPECT_GT(with_bursts, without);
  EXPECT_GT(with_bursts, 2.0);
}

TEST(SynthSeries, RejectsInvalidParameters) {
  CounterRng rng(10);
  EXPECT_THROW(synth_series(100, 3, 0.2, 8.0, rng), Error);
  EXPECT_THROW(synth_series(100, 3, -0.1, 8.0, rng), Error);
  EXPECT_THROW(synth_series(100, 3, 0.02, 0.5, rng), Error);
  EXPECT_THROW(synth_series(0, 3, 0.02, 8.0, rng), Error);
}

TEST(Csv, ParsesHeaderAndSkipsTimestamp) {
  const auto s = parse_csv("date,HUFL,OT\r\n2016-07-01 00:00:00,5.8,30.5\n2016-07-01 01:00:00, 5.6 ,27.8\n\n");
  ASSERT_EQ(s.length(), 2u);
  ASSERT_EQ(s.channels(), 2u);
  EXPECT_EQ(s.channel_names, (std::vector<std::string>{"HUFL", "OT"}));
  EXPECT_EQ(s.values(0, 0), 5.8);
  EXPECT_EQ(s.values(1, 0), 5.6);
  EXPECT_EQ(s.values(1, 1), 27.8);
}

TEST(Csv, Errors) {
  EXPECT_THROW(parse_csv(""), Error);
  EXPECT_THROW(parse_csv("t,1.5\n0,2\n"), Error);
  EXPECT_THROW(parse_csv("t,a\n"), Error);
  EXPECT_THROW(parse_csv("t,a,b\n0,1\n"), Error);
  EXPECT_THROW(parse_csv("t,a\n0,x\n"), Error);
  EXPECT_THROW(parse_csv("t,a\n0,nan\n"), Error);
  EXPECT_THROW(read_csv("/nonexistent/file.csv"), Error);
}

TEST(Splits, ChronologicalAndEtt) {
  Series s{Tensor({100, 1}), {"a"}};
  for (std::size_t i = 0; i < 100; ++i) s.values(i, 0) = static_cast<double>(i);
  const auto c = chronological_split(s);
  EXPECT_EQ(c.train.length(), 70u);
  EXPECT_EQ(c.val.length(), 15u);
  EXPECT_EQ(c.test.length(), 15u);
  EXPECT_EQ(c.val.values(0, 0), 70.0);
  EXPECT_EQ(c.test.values(0, 0), 85.0);

  const auto e = ett_split(s, 5);
  EXPECT_EQ(e.train.length(), 60u);
  EXPECT_EQ(e.val.length(), 20u);
  EXPECT_EQ(e.test.length(), 20u);
  EXPECT_EQ(e.test.values(19, 0), 99.0);
  EXPECT_THROW(ett_split(s, 6), Error);
  EXPECT_THROW(chronological_split(s, 0.9, 0.2), Error);
}
