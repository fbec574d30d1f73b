#pragma once

#include <cstdint>
#include <vector>

#include "detectornet/data.hpp"

namespace dnet {

struct SynthOptions {
  std::size_t nodes = 8;
  std::size_t steps = 4032;           // two weeks at 5-minute sampling
  std::int64_t interval_seconds = 300;
  std::size_t samples_per_day = 288;
  double base_level = 60.0;
  double daily_amplitude = 10.0;
  /// Scales both the latent AR(1) drivers and the observation noise; 0 gives
  /// an exactly periodic series.
  double noise = 1.0;
  /// Weight of the upstream neighbour's lagged driver in each node.
  double coupling = 0.8;
  std::size_t lag = 3;
  double driver_persistence = 0.9;
  std::int64_t start_time = 1330560000;  // 2012-03-01T00:00:00Z
  std::uint64_t seed = 7;
};

struct SyntheticDataset {
  DetectorSeries series;
  std::vector<Edge> edges;
  Tensor adjacency;  // [N, N], Gaussian kernel of the ring edges
};

/// Ring road of `nodes` detectors. Node i reads
///
///   base + amp * sin(2 pi (t - i*lag) / day) + u_i(t) + coupling * u_{i-1}(t - lag) + eps
///
/// where u are seeded AR(1) drivers and eps is white noise, so traffic waves
/// travel downstream with the configured lag. Deterministic given the seed.
SyntheticDataset synthesize_dataset(const SynthOptions& options);

}  // namespace dnet
