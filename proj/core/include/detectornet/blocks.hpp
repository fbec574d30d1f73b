#pragma once

#include "detectornet/tensor.hpp"

namespace dnet {

class Rng;

enum class Mode { train, eval };

/// Per-forward-pass switches shared by every module.
struct ForwardContext {
  Mode mode = Mode::eval;
  double dropout = 0.0;
  /// Required in train mode when dropout > 0.
  Rng* rng = nullptr;

  bool dropout_active() const { return mode == Mode::train && dropout > 0.0; }
};

/// Applies inverted dropout when the context is training, identity otherwise.
Tensor maybe_dropout(const Tensor& x, const ForwardContext& ctx);

/// Pointwise (kernel size 1) affine map over the last axis: x W + b.
/// `bias` may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

struct LayerNormParams {
  Tensor gain;
  Tensor bias;
};

struct FeedForwardParams {
  Tensor w1;
  Tensor b1;
  Tensor w2;
  Tensor b2;
};

/// LayerNorm(ReLU(W2 ReLU(W1 x + b1) + b2) + x), dropout on the hidden layer.
Tensor feed_forward_block(const Tensor& x, const FeedForwardParams& ffn, const LayerNormParams& norm,
                          const ForwardContext& ctx);

}  // namespace dnet
