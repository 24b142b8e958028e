#include "dpadaln/diagnostics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fmt/format.h>

#include "dpadaln/atomic_io.hpp"
#include "dpadaln/tensor.hpp"

namespace dpadaln::diag {

void GradLogRecord::validate() const {
  for (double v : {total_norm, cond_norm, other_norm}) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw Error("gradient log step " + std::to_string(step) + ": norms must be finite and >= 0");
    }
  }
  const double lhs = total_norm * total_norm;
  const double rhs = cond_norm * cond_norm + other_norm * other_norm;
  if (std::abs(lhs - rhs) > 1e-9 * std::max(lhs, rhs)) {
    throw Error(fmt::format("gradient log step {}: total^2 = {:.17g} but cond^2 + other^2 = {:.17g}", step, lhs, rhs));
  }
  if (!(eta > 0.0 && eta <= 1.0)) throw Error(fmt::format("gradient log step {}: eta {} outside (0, 1]", step, eta));
}

std::string_view to_string(Partition p) {
  switch (p) {
    case Partition::total: return "total";
    case Partition::cond: return "cond";
    case Partition::other: return "other";
  }
  return "total";
}

void GradientLog::append(const GradLogRecord& r) {
  r.validate();
  records_.push_back(r);
}

std::vector<double> GradientLog::column(Partition p) const {
  std::vector<double> out;
  out.reserve(records_.size());
  for (const auto& r : records_) {
    out.push_back(p == Partition::total ? r.total_norm : p == Partition::cond ? r.cond_norm : r.other_norm);
  }
  return out;
}

std::string GradientLog::to_csv() const {
  std::string s = "step,total_norm,cond_norm,other_norm,eta\n";
  for (const auto& r : records_) {
    s += fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g}\n", r.step, r.total_norm, r.cond_norm, r.other_norm, r.eta);
  }
  return s;
}

namespace {

template <class T>
T parse_field(std::string_view f, std::size_t line) {
  T v{};
  auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
  if (ec != std::errc() || p != f.data() + f.size()) {
    throw Error("gradient log line " + std::to_string(line) + ": bad field '" + std::string(f) + "'");
  }
  return v;
}

}  // namespace

GradientLog GradientLog::parse_csv(std::string_view text) {
  GradientLog log;
  std::size_t pos = 0, line_no = 0;
  bool header = true;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (header) {
      if (line != "step,total_norm,cond_norm,other_norm,eta") throw Error("gradient log: unexpected header");
      header = false;
      continue;
    }
    std::vector<std::string_view> f;
    std::size_t s = 0;
    while (true) {
      const std::size_t c = line.find(',', s);
      f.push_back(line.substr(s, c == std::string_view::npos ? std::string_view::npos : c - s));
      if (c == std::string_view::npos) break;
      s = c + 1;
    }
    if (f.size() != 5) throw Error("gradient log line " + std::to_string(line_no) + ": expected 5 fields");
    log.append({parse_field<std::uint64_t>(f[0], line_no), parse_field<double>(f[1], line_no),
                parse_field<double>(f[2], line_no), parse_field<double>(f[3], line_no),
                parse_field<double>(f[4], line_no)});
  }
  if (header) throw Error("gradient log: missing header");
  return log;
}

void GradientLog::write_csv(const std::string& path) const { io::write_file_atomic(path, to_csv()); }

GradientLog GradientLog::read_csv(const std::string& path) { return parse_csv(io::read_file(path)); }

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw Error("percentile: empty input");
  if (!(q >= 0.0 && q <= 1.0)) throw Error("percentile: q must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double rank = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

double Quantiles::at(double q) const {
  if (q == 0.5) return p50;
  if (q == 0.9) return p90;
  if (q == 0.95) return p95;
  if (q == 0.99) return p99;
  throw Error(fmt::format("quantile {} is not summarized (use 0.5, 0.9, 0.95 or 0.99)", q));
}

Quantiles Quantiles::of(const std::vector<double>& values) {
  return {percentile(values, 0.5), percentile(values, 0.9), percentile(values, 0.95), percentile(values, 0.99)};
}

const Quantiles& TailSummary::of(Partition p) const {
  return p == Partition::total ? total : p == Partition::cond ? cond : other;
}

TailSummary TailSummary::from(const GradientLog& log) {
  if (log.empty()) throw Error("TailSummary: empty gradient log");
  return {Quantiles::of(log.column(Partition::total)), Quantiles::of(log.column(Partition::cond)),
          Quantiles::of(log.column(Partition::other))};
}

double rho_emp(const TailSummary& aware, const TailSummary& vanilla, Partition which, double q) {
  const double den = vanilla.of(which).at(q);
  if (!(den > 0.0)) throw Error("rho_emp: baseline statistic is zero");
  return aware.of(which).at(q) / den;
}

ClipStats clip_stats(const std::vector<GradLogRecord>& records, double C) {
  if (records.empty()) throw Error("clip_stats: empty log");
  if (!(C > 0.0)) throw Error("clip_stats: C must be positive");
  std::vector<double> eta;
  eta.reserve(records.size());
  std::size_t clipped = 0;
  double sum = 0.0;
  for (const auto& r : records) {
    const double e = r.total_norm > C ? C / r.total_norm : 1.0;
    clipped += r.total_norm > C;
    eta.push_back(e);
    sum += e;
  }
  ClipStats s;
  s.count = records.size();
  s.p_clip = static_cast<double>(clipped) / static_cast<double>(records.size());
  s.mean_eta = sum / static_cast<double>(records.size());
  s.eta10 = percentile(eta, 0.10);
  s.eta50 = percentile(eta, 0.50);
  s.eta90 = percentile(eta, 0.90);
  s.eta99 = percentile(eta, 0.99);
  return s;
}

std::optional<std::string> check_clip_threshold(const std::vector<GradLogRecord>& records, double C, double rel_tol) {
  for (const auto& r : records) {
    const double expected = r.total_norm > C ? C / r.total_norm : 1.0;
    if (std::abs(r.eta - expected) > rel_tol * expected) {
      return fmt::format("step {}: logged eta {:.6g} but min(1, C/||g||) = {:.6g} at C = {:.6g}; the log was written "
                         "with a different clipping threshold",
                         r.step, r.eta, expected, C);
    }
  }
  return std::nullopt;
}

std::vector<CdfRow> ecdf_ccdf_export(std::vector<double> values, const std::vector<double>& grid) {
  if (values.empty()) throw Error("ecdf_ccdf_export: empty input");
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  std::vector<CdfRow> rows;
  rows.reserve(grid.size());
  for (double t : grid) {
    const auto le = static_cast<std::size_t>(std::upper_bound(values.begin(), values.end(), t) - values.begin());
    const double ecdf = static_cast<double>(le) / static_cast<double>(n);
    rows.push_back({t, ecdf, 1.0 - ecdf});
  }
  return rows;
}

std::vector<double> log_grid(const std::vector<double>& values, std::size_t points) {
  if (values.empty()) throw Error("log_grid: empty input");
  if (points < 2) throw Error("log_grid: need at least two points");
  const double mx = *std::max_element(values.begin(), values.end());
  double lo = percentile(values, 0.5) / 10.0;
  const double hi = 10.0 * mx;
  if (!(hi > 0.0)) throw Error("log_grid: all values are zero");
  if (!(lo > 0.0)) lo = hi * 1e-6;
  std::vector<double> g(points);
  const double a = std::log(lo), b = std::log(hi);
  for (std::size_t i = 0; i < points; ++i) {
    g[i] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(points - 1));
  }
  g.front() = lo;
  g.back() = hi;
  return g;
}

std::string cdf_csv(const std::vector<CdfRow>& rows) {
  std::string s = "t,ecdf,ccdf\n";
  for (const auto& r : rows) s += fmt::format("{:.17g},{:.17g},{:.17g}\n", r.t, r.ecdf, r.ccdf);
  return s;
}

std::string format_tail_table(const std::vector<NamedRun>& runs) {
  if (runs.empty()) throw Error("format_tail_table: no runs");
  std::string s = fmt::format("{:<16}| {:>8} {:>8} {:>8} {:>8} {:>8} | {:>8} {:>8} {:>8} {:>8} {:>8}\n", "model",
                              "p95_oth", "p95_cnd", "p95_tot", "rho_emp", "rho_cnd", "p99_oth", "p99_cnd", "p99_tot",
                              "rho_emp", "rho_cnd");
  const TailSummary& base = runs.front().tails;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& t = runs[i].tails;
    s += fmt::format("{:<16}|", runs[i].name);
    for (double q : {0.95, 0.99}) {
      s += fmt::format(" {:>8.3f} {:>8.3f} {:>8.3f}", t.other.at(q), t.cond.at(q), t.total.at(q));
      if (i == 0) {
        s += fmt::format(" {:>8} {:>8}", "--", "--");
      } else {
        s += fmt::format(" {:>8.3f} {:>8.3f}", rho_emp(t, base, Partition::total, q), rho_emp(t, base, Partition::cond, q));
      }
      if (q == 0.95) s += " |";
    }
    s += "\n";
  }
  return s;
}

std::string format_clip_table(const std::vector<NamedRun>& runs) {
  std::string s = fmt::format("{:<16} {:>8} {:>8} {:>8} {:>8} {:>8}\n", "model", "p_clip", "E[eta]", "eta10", "eta50",
                              "eta90");
  for (const auto& r : runs) {
    const auto& c = r.clips;
    s += fmt::format("{:<16} {:>8.3f} {:>8.3f} {:>8.3f} {:>8.3f} {:>8.3f}\n", r.name, c.p_clip, c.mean_eta, c.eta10,
                     c.eta50, c.eta90);
  }
  return s;
}

}  // namespace dpadaln::diag
