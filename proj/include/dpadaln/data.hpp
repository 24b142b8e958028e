#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dpadaln/rng.hpp"
#include "dpadaln/tensor.hpp"

namespace dpadaln::data {

enum class MaskKind { random, block, stride };

std::string_view to_string(MaskKind kind);
MaskKind parse_mask_kind(std::string_view name);

/// Time-step mask over a window. bits[t] = 1 marks an observed step, 0 a
/// step the model has to generate. `param` is the ratio, pred_len or
/// num_blocks that produced it.
struct MaskSpec {
  std::vector<std::uint8_t> bits;
  MaskKind kind = MaskKind::random;
  double param = 0.0;

  std::size_t length() const { return bits.size(); }
  std::size_t masked_count() const;
  std::size_t observed_count() const { return length() - masked_count(); }
  /// 1.0 at masked steps, 0.0 at observed ones.
  std::vector<double> masked_weights() const;
  /// Throws unless at least one step is masked and one is observed.
  void validate() const;
};

MaskSpec random_mask(std::size_t L, double ratio, CounterRng& rng);
MaskSpec block_mask(std::size_t L, std::size_t pred_len);
/// num_blocks intervals of length floor(L / (2 num_blocks)), one per stride
/// of floor(L / num_blocks) steps, shifted by a common random phase.
MaskSpec stride_mask(std::size_t L, std::size_t num_blocks, CounterRng& rng);

/// N x K multivariate series.
struct Series {
  Tensor values;
  std::vector<std::string> channel_names;

  std::size_t length() const { return values.rows(); }
  std::size_t channels() const { return values.cols(); }
  Series rows(std::size_t begin, std::size_t end) const;
};

struct SeriesWindow {
  Tensor values;  // L x K
  std::vector<std::string> channel_names;
  std::size_t origin = 0;
};

std::vector<SeriesWindow> window_dataset(const Series& series, std::size_t L, std::size_t stride);

/// Synthetic series with a seasonal AR(1) target in channel 0 and covariates
/// in the remaining channels. Each region of `region` steps receives, with
/// probability rare_event_prob, a burst of rare_scale standard deviations
/// on one covariate.
Series synth_series(std::size_t n, std::size_t K, double rare_event_prob, double rare_scale, CounterRng& rng,
                    std::size_t region = 24);

struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;

  static NormStats fit(const Series& train);
  Tensor normalize(const Tensor& x) const;
  Tensor denormalize(const Tensor& x) const;
  Series normalize(const Series& s) const;
};

/// Comma-separated file with a header row; the first column (timestamp) is
/// skipped, every other column becomes a channel.
Series read_csv(const std::string& path);
Series parse_csv(std::string_view text);

struct Splits {
  Series train;
  Series val;
  Series test;
};

/// Chronological split by fractions of the row count (remainder goes to test).
Splits chronological_split(const Series& series, double train_frac = 0.7, double val_frac = 0.15);
/// ETT convention: 12 / 4 / 4 months of `rows_per_month` rows each.
Splits ett_split(const Series& series, std::size_t rows_per_month);

}  // namespace dpadaln::data
