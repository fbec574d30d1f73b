#include "detectornet/temporal_attention.hpp"

#include <array>
#include <cmath>

#include "detectornet/error.hpp"
#include "detectornet/ops.hpp"

namespace dnet {

ViewSplit split_views(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("split_views expects [..., P, C], got " + shape_to_string(x.shape()));
  const std::size_t p = x.dim(-2);
  if (p % 3 != 0) {
    throw ConfigError("input length P must be a multiple of 3 for the multi-view split, got " + std::to_string(p));
  }
  const std::size_t m = p / 3;
  return ViewSplit{slice(x, -2, 0, m), slice(x, -2, m, m), slice(x, -2, 2 * m, m), m};
}

Tensor scaled_dot_attention(const Tensor& x, const AttentionProjection& proj, Tensor* attention) {
  Tensor q = linear(x, proj.query);
  Tensor k = linear(x, proj.key);
  Tensor v = linear(x, proj.value);
  const double d_k = static_cast<double>(k.dim(-1));
  Tensor weights = softmax(scale(matmul(q, transpose_last2(k)), 1.0 / std::sqrt(d_k)), -1);
  if (attention != nullptr) *attention = weights;
  return matmul(weights, v);
}

Tensor mtam_forward(const Tensor& x, const MtamParams& params, const ForwardContext& ctx) {
  if (!params.views && !params.global) {
    throw ConfigError("temporal attention needs the multi-view branch, the global branch, or both");
  }
  Tensor fused = mul(params.gamma, linear(x, params.residual));
  if (params.global) {
    Tensor global = maybe_dropout(scaled_dot_attention(x, *params.global), ctx);
    fused = add(fused, mul(params.beta, global));
  }
  if (params.views) {
    ViewSplit split = split_views(x);
    const auto& [long_proj, medium_proj, short_proj] = *params.views;
    const std::array<Tensor, 3> parts{
        maybe_dropout(scaled_dot_attention(split.long_view, long_proj), ctx),
        maybe_dropout(scaled_dot_attention(split.medium_view, medium_proj), ctx),
        maybe_dropout(scaled_dot_attention(split.short_view, short_proj), ctx),
    };
    fused = add(concat(parts, -2), fused);
  }
  return feed_forward_block(fused, params.ffn, params.norm, ctx);
}

}  // namespace dnet
