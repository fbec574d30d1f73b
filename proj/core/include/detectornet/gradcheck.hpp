#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "detectornet/model.hpp"
#include "detectornet/param_store.hpp"

namespace dnet {

struct GradCheckOptions {
  double step = 1e-5;
  /// Coordinates sampled per parameter (all of them when the tensor is smaller).
  std::size_t coords_per_param = 32;
  /// |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double denominator_floor = 1e-6;
  /// Gap between the h and h/2 estimates, relative to max(|estimate|, 1e-3),
  /// above which a coordinate is treated as straddling a kink and re-measured
  /// with step h/16.
  double kink_tolerance = 1e-6;
  std::uint64_t seed = 0;
};

struct ParamGradError {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t kink_coords = 0;
};

struct GradCheckReport {
  std::vector<ParamGradError> params;
  double max_rel_error = 0.0;
  std::size_t kink_coords = 0;
  double seconds = 0.0;

  /// Names of parameters whose worst coordinate exceeds `threshold`.
  std::vector<std::string> failures(double threshold) const;
  std::string to_text() const;
};

/// Central finite differences of `loss_fn` against the gradients produced by
/// one backward pass, for sampled coordinates of every parameter in `store`.
/// `loss_fn` must build a fresh graph on every call.
GradCheckReport check_gradients(const std::function<Tensor()>& loss_fn, ParamStore& store,
                                const GradCheckOptions& options = {});

/// N=3, P=Q=3, C=4, L=1, K=2 with learnable fusion weights.
ModelConfig tiny_gradcheck_config();

/// Builds a model from `config` (seeded by `seed`) on a random graph and
/// random batch, and checks the masked-MAE gradient of every parameter in
/// eval mode.
GradCheckReport gradient_check_model(ModelConfig config, std::uint64_t seed, const GradCheckOptions& options = {});

}  // namespace dnet
