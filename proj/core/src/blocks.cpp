#include "detectornet/blocks.hpp"

#include "detectornet/error.hpp"
#include "detectornet/ops.hpp"

namespace dnet {

Tensor maybe_dropout(const Tensor& x, const ForwardContext& ctx) {
  if (!ctx.dropout_active()) return x;
  if (ctx.rng == nullptr) throw StateError("train-mode dropout needs a random generator");
  return dropout(x, ctx.dropout, *ctx.rng);
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2 || x.rank() == 0 || x.dim(-1) != weight.dim(0)) {
    throw DimensionError("linear: input " + shape_to_string(x.shape()) + " does not match weight " +
                         shape_to_string(weight.shape()));
  }
  Tensor y = matmul(x, weight);
  if (bias.defined()) y = add(y, bias);
  return y;
}

Tensor feed_forward_block(const Tensor& x, const FeedForwardParams& ffn, const LayerNormParams& norm,
                          const ForwardContext& ctx) {
  Tensor hidden = maybe_dropout(relu(linear(x, ffn.w1, ffn.b1)), ctx);
  Tensor out = relu(linear(hidden, ffn.w2, ffn.b2));
  return layer_norm(add(out, x), norm.gain, norm.bias);
}

}  // namespace dnet
