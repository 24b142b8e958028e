#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dpadaln/tensor.hpp"

namespace dpadaln::metrics {

struct PointMetrics {
  double rmse = 0.0;
  double mae = 0.0;
  double mape = 0.0;  // percent
  double r2 = 1.0;
};

/// Over paired values. MAPE skips targets with |target| < 1e-6. When the
/// targets have zero variance, r2 is 1 for a perfect fit and 0 otherwise.
PointMetrics point_metrics(const std::vector<double>& pred, const std::vector<double>& target);
/// Over every channel of the masked rows (observed[t] == 0) of L x K windows.
PointMetrics point_metrics(const Tensor& pred, const Tensor& target, const std::vector<std::uint8_t>& observed);

struct HistDivergence {
  double kl = 0.0;
  double js = 0.0;
};

/// Equal-width bins over the union range, probabilities smoothed by 1e-12, natural log.
HistDivergence hist_divergences(const std::vector<double>& p, const std::vector<double>& q, std::size_t bins = 50);

struct WsKs {
  double ws = 0.0;
  double ks = 0.0;
};

WsKs ws_ks(std::vector<double> p, std::vector<double> q);

/// Square root of the unbiased MMD^2 estimate (clamped at 0) with kernel
/// exp(-(a - b)^2 / (2 bandwidth^2)).
double mmd_rbf(const std::vector<double>& x, const std::vector<double>& y, double bandwidth);
/// Median pairwise distance of the pooled samples.
double median_bandwidth(const std::vector<double>& x, const std::vector<double>& y);

/// Mean squared difference of the sum-normalized DFT periodograms (all L bins).
double spectral_distance(const std::vector<double>& a, const std::vector<double>& b);
/// Channel-wise spectral distance of two L x K windows, averaged over channels.
double spectral_distance(const Tensor& pred, const Tensor& target);

struct MetricReport {
  PointMetrics point;
  double kl = 0.0;
  double js = 0.0;
  double ws = 0.0;
  double ks = 0.0;
  double mmd = 0.0;
  double spectral_dist = 0.0;
  std::size_t windows = 0;
  std::size_t values = 0;

  std::string to_text() const;
  static std::string csv_header();
  std::string csv_row() const;
};

/// Pools masked values over windows for the point and distributional
/// metrics; the spectral distance is averaged over windows.
class MetricAccumulator {
 public:
  void add_window(const Tensor& pred, const Tensor& target, const std::vector<std::uint8_t>& observed);
  MetricReport finish() const;

 private:
  std::vector<double> pred_, target_;
  double spectral_sum_ = 0.0;
  std::size_t windows_ = 0;
};

}  // namespace dpadaln::metrics
