#include "dpadaln/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numbers>

namespace dpadaln::metrics {

PointMetrics point_metrics(const std::vector<double>& pred, const std::vector<double>& target) {
  if (pred.size() != target.size()) throw Error("point_metrics: size mismatch");
  if (pred.empty()) throw Error("point_metrics: no masked positions");
  const auto n = static_cast<double>(pred.size());
  double sse = 0.0, sae = 0.0, ape = 0.0, mean = 0.0;
  std::size_t n_ape = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - target[i];
    sse += e * e;
    sae += std::abs(e);
    if (std::abs(target[i]) >= 1e-6) {
      ape += std::abs(e / target[i]);
      ++n_ape;
    }
    mean += target[i];
  }
  mean /= n;
  double sst = 0.0;
  for (double t : target) sst += (t - mean) * (t - mean);
  PointMetrics m;
  m.rmse = std::sqrt(sse / n);
  m.mae = sae / n;
  m.mape = n_ape > 0 ? 100.0 * ape / static_cast<double>(n_ape) : 0.0;
  m.r2 = sst > 0.0 ? 1.0 - sse / sst : (sse == 0.0 ? 1.0 : 0.0);
  return m;
}

namespace {

void masked_values(const Tensor& pred, const Tensor& target, const std::vector<std::uint8_t>& observed,
                   std::vector<double>& p, std::vector<double>& t) {
  if (!pred.same_shape(target) || pred.rank() != 2) throw Error("metrics: window shapes differ");
  if (observed.size() != pred.rows()) throw Error("metrics: mask length differs from window length");
  for (std::size_t i = 0; i < pred.rows(); ++i) {
    if (observed[i]) continue;
    for (std::size_t k = 0; k < pred.cols(); ++k) {
      p.push_back(pred(i, k));
      t.push_back(target(i, k));
    }
  }
}

double kl(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * std::log(p[i] / q[i]);
  return std::max(s, 0.0);
}

}  // namespace

PointMetrics point_metrics(const Tensor& pred, const Tensor& target, const std::vector<std::uint8_t>& observed) {
  std::vector<double> p, t;
  masked_values(pred, target, observed, p, t);
  return point_metrics(p, t);
}

HistDivergence hist_divergences(const std::vector<double>& p, const std::vector<double>& q, std::size_t bins) {
  if (p.empty() || q.empty()) throw Error("hist_divergences: empty samples");
  if (bins < 1) throw Error("hist_divergences: need at least one bin");
  const auto [pmin, pmax] = std::minmax_element(p.begin(), p.end());
  const auto [qmin, qmax] = std::minmax_element(q.begin(), q.end());
  const double lo = std::min(*pmin, *qmin), hi = std::max(*pmax, *qmax);
  const double width = (hi - lo) / static_cast<double>(bins);
  constexpr double smooth = 1e-12;
  const auto histogram = [&](const std::vector<double>& xs) {
    std::vector<double> h(bins, 0.0);
    for (double x : xs) {
      std::size_t b = width > 0.0 ? static_cast<std::size_t>((x - lo) / width) : 0;
      h[std::min(b, bins - 1)] += 1.0;
    }
    const double n = static_cast<double>(xs.size());
    const double norm = 1.0 + smooth * static_cast<double>(bins);
    for (double& v : h) v = (v / n + smooth) / norm;
    return h;
  };
  const auto hp = histogram(p), hq = histogram(q);
  std::vector<double> m(bins);
  for (std::size_t i = 0; i < bins; ++i) m[i] = 0.5 * (hp[i] + hq[i]);
  HistDivergence d;
  d.kl = kl(hp, hq);
  d.js = 0.5 * kl(hp, m) + 0.5 * kl(hq, m);
  return d;
}

WsKs ws_ks(std::vector<double> p, std::vector<double> q) {
  if (p.empty() || q.empty()) throw Error("ws_ks: empty samples");
  std::sort(p.begin(), p.end());
  std::sort(q.begin(), q.end());
  const double np = static_cast<double>(p.size()), nq = static_cast<double>(q.size());
  // Sweep the merged support; between consecutive points both ECDFs are constant.
  std::size_t i = 0, j = 0;
  double prev = std::min(p.front(), q.front());
  WsKs r;
  while (i < p.size() || j < q.size()) {
    const double x = j >= q.size() || (i < p.size() && p[i] <= q[j]) ? p[i] : q[j];
    const double gap = std::abs(static_cast<double>(i) / np - static_cast<double>(j) / nq);
    r.ws += gap * (x - prev);
    while (i < p.size() && p[i] == x) ++i;
    while (j < q.size() && q[j] == x) ++j;
    r.ks = std::max(r.ks, std::abs(static_cast<double>(i) / np - static_cast<double>(j) / nq));
    prev = x;
  }
  return r;
}

double mmd_rbf(const std::vector<double>& x, const std::vector<double>& y, double bandwidth) {
  if (x.size() < 2 || y.size() < 2) throw Error("mmd_rbf: need at least two samples per side");
  if (!(bandwidth > 0.0)) throw Error("mmd_rbf: bandwidth must be positive");
  const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
  const auto k = [inv](double a, double b) { return std::exp(-(a - b) * (a - b) * inv); };
  const double m = static_cast<double>(x.size()), n = static_cast<double>(y.size());
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (i != j) sxx += k(x[i], x[j]);
    }
  }
  for (std::size_t i = 0; i < y.size(); ++i) {
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (i != j) syy += k(y[i], y[j]);
    }
  }
  for (double a : x) {
    for (double b : y) sxy += k(a, b);
  }
  const double mmd2 = sxx / (m * (m - 1.0)) + syy / (n * (n - 1.0)) - 2.0 * sxy / (m * n);
  return std::sqrt(std::max(mmd2, 0.0));
}

double median_bandwidth(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> pooled(x);
  pooled.insert(pooled.end(), y.begin(), y.end());
  if (pooled.size() < 2) throw Error("median_bandwidth: need at least two samples");
  std::vector<double> d;
  d.reserve(pooled.size() * (pooled.size() - 1) / 2);
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    for (std::size_t j = i + 1; j < pooled.size(); ++j) d.push_back(std::abs(pooled[i] - pooled[j]));
  }
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  double med = *mid;
  if (d.size() % 2 == 0) med = 0.5 * (med + *std::max_element(d.begin(), mid));
  return med > 0.0 ? med : 1.0;
}

namespace {

std::vector<double> normalized_periodogram(const std::vector<double>& a) {
  const std::size_t n = a.size();
  std::vector<double> p(n);
  double total = 0.0;
  for (std::size_t f = 0; f < n; ++f) {
    double re = 0.0, im = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double ang = -2.0 * std::numbers::pi * static_cast<double>((f * t) % n) / static_cast<double>(n);
      re += a[t] * std::cos(ang);
      im += a[t] * std::sin(ang);
    }
    p[f] = re * re + im * im;
    total += p[f];
  }
  for (double& v : p) v = total > 0.0 ? v / total : 1.0 / static_cast<double>(n);
  return p;
}

}  // namespace

double spectral_distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error("spectral_distance: length mismatch");
  if (a.size() < 4) throw Error("spectral_distance: need at least 4 points");
  const auto pa = normalized_periodogram(a), pb = normalized_periodogram(b);
  double s = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) s += (pa[i] - pb[i]) * (pa[i] - pb[i]);
  return s / static_cast<double>(pa.size());
}

double spectral_distance(const Tensor& pred, const Tensor& target) {
  if (!pred.same_shape(target) || pred.rank() != 2) throw Error("spectral_distance: window shapes differ");
  const std::size_t L = pred.rows(), K = pred.cols();
  double s = 0.0;
  std::vector<double> a(L), b(L);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t t = 0; t < L; ++t) {
      a[t] = pred(t, k);
      b[t] = target(t, k);
    }
    s += spectral_distance(a, b);
  }
  return s / static_cast<double>(K);
}

std::string MetricReport::to_text() const {
  std::string s = "# distributional metrics pool masked values over all windows; spectral distance is a per-window mean\n";
  s += fmt::format("windows = {}\nvalues = {}\n", windows, values);
  s += fmt::format("point_RMSE = {:.6g}\npoint_MAE = {:.6g}\npoint_MAPE = {:.6g}\npoint_R2 = {:.6g}\n", point.rmse,
                   point.mae, point.mape, point.r2);
  s += fmt::format("dist_KL = {:.6g}\ndist_JS = {:.6g}\ndist_WS = {:.6g}\ndist_KS = {:.6g}\ndist_MMD = {:.6g}\n", kl, js,
                   ws, ks, mmd);
  s += fmt::format("temp_spec_dist = {:.6g}\n", spectral_dist);
  return s;
}

std::string MetricReport::csv_header() {
  return "windows,values,rmse,mae,mape,r2,kl,js,ws,ks,mmd,spectral_dist";
}

std::string MetricReport::csv_row() const {
  return fmt::format("{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}", windows,
                     values, point.rmse, point.mae, point.mape, point.r2, kl, js, ws, ks, mmd, spectral_dist);
}

void MetricAccumulator::add_window(const Tensor& pred, const Tensor& target, const std::vector<std::uint8_t>& observed) {
  masked_values(pred, target, observed, pred_, target_);
  spectral_sum_ += spectral_distance(pred, target);
  ++windows_;
}

MetricReport MetricAccumulator::finish() const {
  if (pred_.empty()) throw Error("metrics: no masked positions were evaluated");
  MetricReport r;
  r.windows = windows_;
  r.values = pred_.size();
  r.point = point_metrics(pred_, target_);
  const auto h = hist_divergences(pred_, target_);
  r.kl = h.kl;
  r.js = h.js;
  const auto w = ws_ks(pred_, target_);
  r.ws = w.ws;
  r.ks = w.ks;
  // The quadratic MMD runs on an evenly strided subsample of at most 1000 values per side.
  const auto thin = [](const std::vector<double>& v) {
    constexpr std::size_t cap = 1000;
    if (v.size() <= cap) return v;
    std::vector<double> out;
    out.reserve(cap);
    for (std::size_t i = 0; i < cap; ++i) out.push_back(v[i * v.size() / cap]);
    return out;
  };
  const auto xs = thin(pred_), ys = thin(target_);
  if (xs.size() >= 2) r.mmd = mmd_rbf(xs, ys, median_bandwidth(xs, ys));
  r.spectral_dist = spectral_sum_ / static_cast<double>(windows_);
  return r;
}

}  // namespace dpadaln::metrics
