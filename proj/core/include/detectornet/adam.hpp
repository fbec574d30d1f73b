#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "detectornet/param_store.hpp"

namespace dnet {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// L2 coefficient added to the gradient (g + weight_decay * p).
  double weight_decay = 0.0;
};

/// Moment buffers keyed by parameter name plus the shared step counter.
class AdamState {
 public:
  explicit AdamState(AdamOptions options = {}) : options_(options) {}

  AdamOptions& options() { return options_; }
  const AdamOptions& options() const { return options_; }
  std::uint64_t step() const { return step_; }

 private:
  struct Moments {
    std::vector<double> first;
    std::vector<double> second;
  };

  AdamOptions options_;
  std::uint64_t step_ = 0;
  std::unordered_map<std::string, Moments> moments_;

  friend void adam_step(ParamStore& store, AdamState& state);
};

/// One bias-corrected Adam update of every parameter in `store`.
/// Throws StateError naming the first parameter without a gradient.
void adam_step(ParamStore& store, AdamState& state);

}  // namespace dnet
