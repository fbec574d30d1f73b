#pragma once

#include <array>
#include <optional>

#include "detectornet/blocks.hpp"
#include "detectornet/tensor.hpp"

namespace dnet {

/// Query/key/value maps of one self-attention branch, each [C_in, C_out].
struct AttentionProjection {
  Tensor query;
  Tensor key;
  Tensor value;
};

/// Chronological thirds of a P-step window along the time axis (-2).
struct ViewSplit {
  Tensor long_view;    // oldest m steps
  Tensor medium_view;  // the m steps before the most recent m
  Tensor short_view;   // most recent m steps
  std::size_t view_length = 0;
};

/// Splits x: [..., P, C] into three equal views. P must be a multiple of 3.
ViewSplit split_views(const Tensor& x);

/// softmax(Q K^T / sqrt(d_k)) V over the time axis, independently for every
/// leading index. x: [..., T, C_in] -> [..., T, C_out], d_k = C_out.
/// When `attention` is non-null it receives the [..., T, T] weights.
Tensor scaled_dot_attention(const Tensor& x, const AttentionProjection& proj, Tensor* attention = nullptr);

/// Weights of one multi-view temporal attention module.
///
/// `views` (long, medium, short) is empty when the multi-view branch is
/// ablated; `global` is empty when global attention is ablated. `beta` and
/// `gamma` are scalar tensors, trainable or constant.
struct MtamParams {
  std::optional<std::array<AttentionProjection, 3>> views;
  std::optional<AttentionProjection> global;
  Tensor residual;  // W_res, [C_in, C_out]
  Tensor beta;
  Tensor gamma;
  FeedForwardParams ffn;
  LayerNormParams norm;
};

/// Fusion of the view branch, the global branch and the residual path,
/// followed by the FFN block. x: [..., P, C_in] -> [..., P, C_out].
Tensor mtam_forward(const Tensor& x, const MtamParams& params, const ForwardContext& ctx);

}  // namespace dnet
