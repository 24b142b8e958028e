#include "dpadaln/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace dpadaln::data {

std::string_view to_string(MaskKind kind) {
  switch (kind) {
    case MaskKind::random: return "random";
    case MaskKind::block: return "block";
    case MaskKind::stride: return "stride";
  }
  return "random";
}

MaskKind parse_mask_kind(std::string_view name) {
  if (name == "random") return MaskKind::random;
  if (name == "block") return MaskKind::block;
  if (name == "stride") return MaskKind::stride;
  throw Error("unknown mask kind '" + std::string(name) + "' (expected random, block or stride)");
}

std::size_t MaskSpec::masked_count() const {
  std::size_t n = 0;
  for (auto b : bits) n += (b == 0);
  return n;
}

std::vector<double> MaskSpec::masked_weights() const {
  std::vector<double> w(bits.size());
  for (std::size_t i = 0; i < bits.size(); ++i) w[i] = bits[i] ? 0.0 : 1.0;
  return w;
}

void MaskSpec::validate() const {
  const std::size_t m = masked_count();
  if (m == 0) throw Error("mask has no masked positions");
  if (m == length()) throw Error("mask has no observed positions");
}

MaskSpec random_mask(std::size_t L, double ratio, CounterRng& rng) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw Error("random_mask: ratio must lie in (0, 1)");
  const auto count = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(L)));
  if (count == 0 || count >= L) {
    throw Error("random_mask: ratio " + std::to_string(ratio) + " masks " + std::to_string(count) + " of " +
                std::to_string(L) + " positions");
  }
  std::vector<std::size_t> order(L);
  for (std::size_t i = 0; i < L; ++i) order[i] = i;
  // Partial Fisher-Yates: the first `count` slots are a uniform sample without replacement.
  for (std::size_t i = 0; i < count; ++i) std::swap(order[i], order[i + rng.index(L - i)]);
  MaskSpec m{std::vector<std::uint8_t>(L, 1), MaskKind::random, ratio};
  for (std::size_t i = 0; i < count; ++i) m.bits[order[i]] = 0;
  return m;
}

MaskSpec block_mask(std::size_t L, std::size_t pred_len) {
  if (pred_len < 1 || pred_len >= L) {
    throw Error("block_mask: pred_len " + std::to_string(pred_len) + " must lie in [1, " + std::to_string(L) + ")");
  }
  MaskSpec m{std::vector<std::uint8_t>(L, 1), MaskKind::block, static_cast<double>(pred_len)};
  for (std::size_t i = L - pred_len; i < L; ++i) m.bits[i] = 0;
  return m;
}

MaskSpec stride_mask(std::size_t L, std::size_t num_blocks, CounterRng& rng) {
  if (num_blocks < 1 || num_blocks * 2 > L) {
    throw Error("stride_mask: " + std::to_string(num_blocks) + " blocks do not fit in length " + std::to_string(L));
  }
  const std::size_t len = L / (2 * num_blocks);
  const std::size_t stride = L / num_blocks;
  const std::size_t phase = rng.index(stride - len + 1);
  MaskSpec m{std::vector<std::uint8_t>(L, 1), MaskKind::stride, static_cast<double>(num_blocks)};
  for (std::size_t b = 0; b < num_blocks; ++b) {
    for (std::size_t i = 0; i < len; ++i) m.bits[phase + b * stride + i] = 0;
  }
  return m;
}

Series Series::rows(std::size_t begin, std::size_t end) const {
  if (begin > end || end > length()) throw Error("Series::rows: invalid range");
  const std::size_t K = channels();
  std::vector<double> v(values.data.begin() + static_cast<std::ptrdiff_t>(begin * K),
                        values.data.begin() + static_cast<std::ptrdiff_t>(end * K));
  return Series{Tensor({end - begin, K}, std::move(v)), channel_names};
}

std::vector<SeriesWindow> window_dataset(const Series& series, std::size_t L, std::size_t stride) {
  if (L == 0 || stride == 0) throw Error("window_dataset: window length and stride must be positive");
  const std::size_t N = series.length();
  if (N < L) {
    throw Error("window_dataset: series of length " + std::to_string(N) + " is shorter than the window " +
                std::to_string(L));
  }
  std::vector<SeriesWindow> out;
  const std::size_t count = (N - L) / stride + 1;
  out.reserve(count);
  for (std::size_t w = 0; w < count; ++w) {
    const std::size_t origin = w * stride;
    out.push_back({series.rows(origin, origin + L).values, series.channel_names, origin});
  }
  return out;
}

Series synth_series(std::size_t n, std::size_t K, double rare_event_prob, double rare_scale, CounterRng& rng,
                    std::size_t region) {
  if (n == 0 || K == 0) throw Error("synth_series: length and channel count must be positive");
  if (!(rare_event_prob >= 0.0 && rare_event_prob <= 0.1)) {
    throw Error("synth_series: rare_event_prob must lie in [0, 0.1]");
  }
  if (!(rare_scale >= 1.0)) throw Error("synth_series: rare_scale must be >= 1");
  if (region == 0) throw Error("synth_series: region length must be positive");
  constexpr double two_pi = 2.0 * std::numbers::pi;
  // Covariate innovations are scaled so the AR(1) part has unit stationary std.
  constexpr double phi_cov = 0.8;
  const double cov_innov = std::sqrt(1.0 - phi_cov * phi_cov);
  constexpr double phi_target = 0.7;

  Tensor v({n, K});
  std::vector<double> ar(K, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    const double tt = static_cast<double>(t);
    for (std::size_t k = 1; k < K; ++k) {
      ar[k] = phi_cov * ar[k] + cov_innov * rng.normal();
      v(t, k) = ar[k] + 0.5 * std::cos(two_pi * tt / 24.0 + static_cast<double>(k));
    }
    ar[0] = phi_target * ar[0] + 0.3 * rng.normal();
    const double coupling = K > 1 ? 0.3 * v(t, 1) : 0.0;
    v(t, 0) = std::sin(two_pi * tt / 24.0) + 0.5 * std::sin(two_pi * tt / 168.0) + ar[0] + coupling;
  }
  if (K > 1 && rare_event_prob > 0.0) {
    for (std::size_t start = 0; start < n; start += region) {
      // Draws are consumed for every region so the stream layout does not depend on outcomes.
      const double u = rng.uniform();
      const std::size_t k = 1 + rng.index(K - 1);
      const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      if (u >= rare_event_prob) continue;
      const std::size_t end = std::min(n, start + region);
      for (std::size_t t = start; t < end; ++t) v(t, k) += sign * rare_scale;
    }
  }
  std::vector<std::string> names{"target"};
  for (std::size_t k = 1; k < K; ++k) names.push_back("cov" + std::to_string(k));
  return Series{std::move(v), std::move(names)};
}

NormStats NormStats::fit(const Series& train) {
  const std::size_t N = train.length(), K = train.channels();
  if (N < 2) throw Error("NormStats::fit: need at least two rows");
  NormStats s{std::vector<double>(K, 0.0), std::vector<double>(K, 0.0)};
  for (std::size_t t = 0; t < N; ++t) {
    for (std::size_t k = 0; k < K; ++k) s.mean[k] += train.values(t, k);
  }
  for (double& m : s.mean) m /= static_cast<double>(N);
  for (std::size_t t = 0; t < N; ++t) {
    for (std::size_t k = 0; k < K; ++k) {
      const double d = train.values(t, k) - s.mean[k];
      s.stddev[k] += d * d;
    }
  }
  for (std::size_t k = 0; k < K; ++k) {
    s.stddev[k] = std::sqrt(s.stddev[k] / static_cast<double>(N));
    if (!(s.stddev[k] > 0.0) || !std::isfinite(s.stddev[k])) {
      const std::string name = k < train.channel_names.size() ? train.channel_names[k] : std::to_string(k);
      throw Error("NormStats::fit: channel '" + name + "' has zero variance");
    }
  }
  return s;
}

Tensor NormStats::normalize(const Tensor& x) const {
  const std::size_t K = x.cols();
  if (K != mean.size()) throw Error("NormStats::normalize: channel count mismatch");
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (x[i] - mean[i % K]) / stddev[i % K];
  return out;
}

Tensor NormStats::denormalize(const Tensor& x) const {
  const std::size_t K = x.cols();
  if (K != mean.size()) throw Error("NormStats::denormalize: channel count mismatch");
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * stddev[i % K] + mean[i % K];
  return out;
}

Series NormStats::normalize(const Series& s) const { return Series{normalize(s.values), s.channel_names}; }

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  for (auto& f : out) {
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
  }
  return out;
}

}  // namespace

Series parse_csv(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t pos = text.find('\n', start);
    if (pos == std::string_view::npos) pos = text.size();
    std::string_view line = text.substr(start, pos - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) lines.push_back(line);
    start = pos + 1;
  }
  if (lines.empty()) throw Error("csv: empty input");
  const auto header = split_commas(lines.front());
  if (header.size() < 2) throw Error("csv: header needs a timestamp column and at least one channel");
  for (auto h : header) {
    double tmp;
    auto [p, ec] = std::from_chars(h.data(), h.data() + h.size(), tmp);
    if (ec == std::errc() && p == h.data() + h.size() && &h != &header.front()) {
      throw Error("csv: header row required (found numeric field '" + std::string(h) + "')");
    }
  }
  const std::size_t K = header.size() - 1;
  std::vector<double> values;
  values.reserve((lines.size() - 1) * K);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto fields = split_commas(lines[r]);
    if (fields.size() != header.size()) {
      throw Error("csv: line " + std::to_string(r + 1) + " has " + std::to_string(fields.size()) + " fields, expected " +
                  std::to_string(header.size()));
    }
    for (std::size_t k = 1; k < fields.size(); ++k) {
      double x = 0.0;
      auto [p, ec] = std::from_chars(fields[k].data(), fields[k].data() + fields[k].size(), x);
      if (ec != std::errc() || p != fields[k].data() + fields[k].size() || !std::isfinite(x)) {
        throw Error("csv: line " + std::to_string(r + 1) + " column '" + std::string(header[k]) +
                    "' is not a finite number");
      }
      values.push_back(x);
    }
  }
  const std::size_t N = lines.size() - 1;
  if (N == 0) throw Error("csv: no data rows");
  std::vector<std::string> names;
  for (std::size_t k = 1; k < header.size(); ++k) names.emplace_back(header[k]);
  return Series{Tensor({N, K}, std::move(values)), std::move(names)};
}

Series read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("csv: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str());
}

Splits chronological_split(const Series& series, double train_frac, double val_frac) {
  if (!(train_frac > 0.0 && val_frac >= 0.0 && train_frac + val_frac < 1.0)) {
    throw Error("chronological_split: fractions must satisfy train > 0, val >= 0, train + val < 1");
  }
  const std::size_t N = series.length();
  const auto n_train = static_cast<std::size_t>(std::floor(train_frac * static_cast<double>(N)));
  const auto n_val = static_cast<std::size_t>(std::floor(val_frac * static_cast<double>(N)));
  if (n_train == 0 || n_train + n_val >= N) throw Error("chronological_split: series too short");
  return {series.rows(0, n_train), series.rows(n_train, n_train + n_val), series.rows(n_train + n_val, N)};
}

Splits ett_split(const Series& series, std::size_t rows_per_month) {
  const std::size_t a = 12 * rows_per_month, b = 16 * rows_per_month, c = 20 * rows_per_month;
  if (rows_per_month == 0 || series.length() < c) {
    throw Error("ett_split: need 20 months of " + std::to_string(rows_per_month) + " rows, got " +
                std::to_string(series.length()));
  }
  return {series.rows(0, a), series.rows(a, b), series.rows(b, c)};
}

}  // namespace dpadaln::data
