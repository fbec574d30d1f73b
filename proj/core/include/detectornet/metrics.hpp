#pragma once

#include <optional>
#include <string>
#include <vector>

#include "detectornet/tensor.hpp"

namespace dnet {

/// Masked error statistics of one slice. Values are absent when every entry
/// of the slice is masked out.
struct SliceMetrics {
  std::optional<double> mae;
  std::optional<double> rmse;
  std::optional<double> mape;  // percent
  std::size_t count = 0;
};

struct HorizonMetrics {
  std::size_t horizon = 0;  // 1-based step ahead
  SliceMetrics metrics;
};

struct MetricsReport {
  std::vector<HorizonMetrics> horizons;
  SliceMetrics aggregate;
  double seconds = 0.0;

  /// One JSON object per horizon, then one for the aggregate ("horizon": "all").
  /// `label` is written as the "model" field when non-empty.
  std::string to_json_lines(const std::string& label = "") const;
};

/// MAE, RMSE and MAPE over entries whose mask is nonzero (and, for MAPE, whose
/// truth is nonzero).
SliceMetrics masked_metrics(std::span<const double> pred, std::span<const double> truth,
                            std::span<const double> mask);

/// pred/truth/mask: [..., Q, c]. Reports every requested 1-based horizon plus
/// the aggregate over all Q horizons. An empty `horizons` reports all of them.
MetricsReport evaluate_metrics(const Tensor& pred, const Tensor& truth, const Tensor& mask,
                               const std::vector<std::size_t>& horizons = {});

}  // namespace dnet
