#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "detectornet/tensor.hpp"

namespace dnet {

/// Uniformly sampled detector readings, row-major [T, N].
struct DetectorSeries {
  std::vector<std::int64_t> timestamps;  // seconds since the Unix epoch (UTC)
  std::vector<std::string> node_ids;
  std::vector<double> values;
  std::int64_t interval_seconds = 300;

  std::size_t steps() const { return timestamps.size(); }
  std::size_t nodes() const { return node_ids.size(); }
  double at(std::size_t t, std::size_t node) const { return values[t * node_ids.size() + node]; }
};

/// "YYYY-MM-DDTHH:MM:SS" (a space separator is also accepted on input).
std::int64_t parse_timestamp(std::string_view text);
std::string format_timestamp(std::int64_t seconds);

/// Reads `timestamp,<id1>,<id2>,...` CSV. Throws FormatError with the line
/// number on ragged rows, bad numbers or non-uniform timestamps.
DetectorSeries load_series_csv(const std::filesystem::path& path);
/// Canonical writer: shortest round-trip number formatting, '\n' endings.
void write_series_csv(const std::filesystem::path& path, const DetectorSeries& series);

struct Edge {
  std::string from;
  std::string to;
  double distance = 0.0;
};

std::vector<Edge> load_edges_csv(const std::filesystem::path& path);
void write_edges_csv(const std::filesystem::path& path, const std::vector<Edge>& edges);

/// Thresholded Gaussian kernel over listed edges:
/// A[from][to] = exp(-(d / sigma)^2), zeroed below `threshold`.
/// `sigma` defaults to the population std of the listed distances.
Tensor gaussian_kernel_adjacency(const std::vector<Edge>& edges, const std::vector<std::string>& node_ids,
                                 std::optional<double> sigma, double threshold);

/// load_edges_csv + gaussian_kernel_adjacency. FormatError on unknown ids.
Tensor load_adjacency_csv(const std::filesystem::path& path, const std::vector<std::string>& node_ids,
                          std::optional<double> sigma = std::nullopt, double threshold = 0.1);

struct Normalization {
  double mean = 0.0;
  double std = 1.0;

  double apply(double v) const { return (v - mean) / std; }
  double invert(double v) const { return v * std + mean; }
};

/// Materialized windows. `inputs` are z-scored (plus time of day when D = 2),
/// `targets` and `raw_inputs` are in original units.
struct SampleBatch {
  Tensor inputs;      // [B, N, P, D]
  Tensor raw_inputs;  // [B, N, P]
  Tensor targets;     // [B, N, Q, 1]
  Tensor mask;        // [B, N, Q, 1]; 1 where the raw target is nonzero
  Normalization norm;
  std::vector<std::size_t> offsets;  // series row of each window's first input step

  std::size_t size() const { return offsets.size(); }
  /// Targets mapped to model space (z-scored).
  Tensor normalized_targets() const;
};

struct WindowOptions {
  std::size_t input_len = 12;
  std::size_t output_len = 12;
  std::size_t input_dim = 2;
  double train_fraction = 0.7;
  double val_fraction = 0.1;
};

/// Lazily materialized set of sliding windows over one shared series.
class WindowSet {
 public:
  WindowSet() = default;
  WindowSet(std::shared_ptr<const DetectorSeries> series, std::vector<std::size_t> offsets, WindowOptions options,
            Normalization norm);

  std::size_t size() const { return offsets_.size(); }
  bool empty() const { return offsets_.empty(); }
  const std::vector<std::size_t>& offsets() const { return offsets_; }
  const Normalization& normalization() const { return norm_; }
  const WindowOptions& options() const { return options_; }
  std::size_t nodes() const { return series_ ? series_->nodes() : 0; }

  /// Windows at positions [begin, begin + count) of this set.
  SampleBatch batch(std::size_t begin, std::size_t count) const;
  /// Windows at arbitrary positions of this set.
  SampleBatch gather(const std::vector<std::size_t>& positions) const;
  SampleBatch all() const { return batch(0, size()); }
  /// First `count` windows as a new set (same statistics).
  WindowSet head(std::size_t count) const;

 private:
  std::shared_ptr<const DetectorSeries> series_;
  std::vector<std::size_t> offsets_;
  WindowOptions options_;
  Normalization norm_;
};

struct DataSplits {
  WindowSet train;
  WindowSet val;
  WindowSet test;
  Normalization norm;
};

/// Stride-1 windows (T - P - Q + 1 of them), split chronologically. z-score
/// statistics come from the series rows covered by training inputs only.
/// `norm_override` replaces those statistics (e.g. from a checkpoint).
DataSplits make_windows(std::shared_ptr<const DetectorSeries> series, const WindowOptions& options,
                        std::optional<Normalization> norm_override = std::nullopt);

/// Horizon-independent baseline: each node's mean raw input value repeated
/// for all Q horizons. Returns [B, N, Q, 1].
Tensor historical_average(const SampleBatch& batch, std::size_t output_len);

}  // namespace dnet
