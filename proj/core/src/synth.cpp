#include "detectornet/synth.hpp"

#include <cmath>
#include <numbers>

#include "detectornet/error.hpp"
#include "detectornet/random.hpp"

namespace dnet {

SyntheticDataset synthesize_dataset(const SynthOptions& opt) {
  if (opt.nodes < 2) throw ValidationError("synthetic ring needs at least 2 nodes");
  if (opt.steps == 0 || opt.samples_per_day == 0 || opt.interval_seconds <= 0) {
    throw ValidationError("synthetic series needs positive steps, samples_per_day and interval");
  }
  if (!(opt.driver_persistence > -1.0 && opt.driver_persistence < 1.0)) {
    throw ValidationError("driver persistence must lie in (-1, 1)");
  }
  const std::size_t n = opt.nodes;
  const std::size_t t_total = opt.steps;
  const std::size_t lag = opt.lag;
  Rng rng(opt.seed);

  // Drivers run `lag` extra steps so every node has a lagged upstream value.
  const std::size_t horizon = t_total + lag;
  std::vector<double> drivers(horizon * n);
  const double phi = opt.driver_persistence;
  const double stationary_sd = 1.0 / std::sqrt(1.0 - phi * phi);
  for (std::size_t i = 0; i < n; ++i) drivers[i] = opt.noise * stationary_sd * rng.normal();
  for (std::size_t t = 1; t < horizon; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      drivers[t * n + i] = phi * drivers[(t - 1) * n + i] + opt.noise * rng.normal();
    }
  }

  SyntheticDataset out;
  auto& s = out.series;
  s.interval_seconds = opt.interval_seconds;
  for (std::size_t i = 0; i < n; ++i) s.node_ids.push_back("n" + std::to_string(i));
  s.timestamps.resize(t_total);
  s.values.resize(t_total * n);
  const double period = static_cast<double>(opt.samples_per_day);
  for (std::size_t t = 0; t < t_total; ++t) {
    s.timestamps[t] = opt.start_time + static_cast<std::int64_t>(t) * opt.interval_seconds;
    const std::size_t now = t + lag;  // index into the driver buffer
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t upstream = (i + n - 1) % n;
      const double phase = 2.0 * std::numbers::pi *
                           (static_cast<double>(t) - static_cast<double>(i * lag)) / period;
      double v = opt.base_level + opt.daily_amplitude * std::sin(phase);
      v += drivers[now * n + i] + opt.coupling * drivers[(now - lag) * n + upstream];
      v += 0.5 * opt.noise * rng.normal();
      s.values[t * n + i] = v;
    }
  }

  // Adjacent detectors in both directions, plus two-hop pairs whose kernel
  // weight falls under the default threshold (as in real distance tables).
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t next = (i + 1) % n;
    out.edges.push_back(Edge{s.node_ids[i], s.node_ids[next], 1.0});
    out.edges.push_back(Edge{s.node_ids[next], s.node_ids[i], 1.0});
    out.edges.push_back(Edge{s.node_ids[i], s.node_ids[(i + 2) % n], 3.0});
  }
  out.adjacency = gaussian_kernel_adjacency(out.edges, s.node_ids, std::nullopt, 0.1);
  return out;
}

}  // namespace dnet
