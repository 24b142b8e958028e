#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dpadaln::diag {

/// One per-example gradient observation.
struct GradLogRecord {
  std::uint64_t step = 0;
  double total_norm = 0.0;
  double cond_norm = 0.0;
  double other_norm = 0.0;
  double eta = 1.0;

  /// Checks total^2 = cond^2 + other^2 (1e-9 relative) and 0 < eta <= 1.
  void validate() const;
};

enum class Partition { total, cond, other };

std::string_view to_string(Partition p);

/// Append-only log; every record is validated on entry.
class GradientLog {
 public:
  void append(const GradLogRecord& r);
  const std::vector<GradLogRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  std::vector<double> column(Partition p) const;

  /// CSV with header step,total_norm,cond_norm,other_norm,eta and %.17g values.
  std::string to_csv() const;
  static GradientLog parse_csv(std::string_view text);
  void write_csv(const std::string& path) const;
  static GradientLog read_csv(const std::string& path);

 private:
  std::vector<GradLogRecord> records_;
};

/// Linear-interpolation quantile at rank q (n - 1) of the sorted values.
double percentile(std::vector<double> values, double q);

struct Quantiles {
  double p50 = 0.0;
  double p90 = 0.0;
  double p95 = 0.0;
  double p99 = 0.0;

  /// q must be one of 0.5, 0.9, 0.95, 0.99.
  double at(double q) const;
  static Quantiles of(const std::vector<double>& values);
};

struct TailSummary {
  Quantiles total;
  Quantiles cond;
  Quantiles other;

  const Quantiles& of(Partition p) const;
  static TailSummary from(const GradientLog& log);
};

/// S(aware) / S(vanilla) for one partition and quantile.
double rho_emp(const TailSummary& aware, const TailSummary& vanilla, Partition which, double q);

struct ClipStats {
  std::size_t count = 0;
  double p_clip = 0.0;
  double mean_eta = 1.0;
  double eta10 = 1.0;
  double eta50 = 1.0;
  double eta90 = 1.0;
  double eta99 = 1.0;
};

/// p_clip = fraction of records with total_norm > C; eta = min(1, C / total_norm).
ClipStats clip_stats(const std::vector<GradLogRecord>& records, double C);

/// Describes the first record whose logged eta disagrees with min(1, C / total_norm),
/// which signals a log produced under a different clipping threshold.
std::optional<std::string> check_clip_threshold(const std::vector<GradLogRecord>& records, double C,
                                                double rel_tol = 1e-9);

struct CdfRow {
  double t = 0.0;
  double ecdf = 0.0;
  double ccdf = 0.0;
};

/// ECDF = fraction <= t, CCDF = fraction > t (both as count / n).
std::vector<CdfRow> ecdf_ccdf_export(std::vector<double> values, const std::vector<double>& grid);
/// `points` log-spaced values over [p50 / 10, 10 max].
std::vector<double> log_grid(const std::vector<double>& values, std::size_t points = 200);
std::string cdf_csv(const std::vector<CdfRow>& rows);

struct NamedRun {
  std::string name;
  TailSummary tails;
  ClipStats clips;
};

/// Gradient-norm table: S_other, S_cond, S_total and rho values at p95 and
/// p99; the first run is the baseline for rho.
std::string format_tail_table(const std::vector<NamedRun>& runs);
/// Clipping table: p_clip, E[eta], eta10, eta50, eta90.
std::string format_clip_table(const std::vector<NamedRun>& runs);

}  // namespace dpadaln::diag
