#pragma once

#include <optional>
#include <vector>

#include "detectornet/blocks.hpp"
#include "detectornet/graph.hpp"

namespace dnet {

/// Weights of one dynamic spatial GCN layer.
///
/// Each weight vector holds one [C_in, C_out] matrix per diffusion order
/// k = 0..K, or is empty when that term is ablated (`forward`/`backward`
/// together, `dynamic` together with `adjacency`).
struct DsgcnParams {
  std::size_t order = 2;
  std::vector<Tensor> forward;   // W_k1, applied after P_f^k
  std::vector<Tensor> backward;  // W_k2, applied after P_b^k
  std::vector<Tensor> dynamic;   // W_k3, applied after A_dynamic^k
  std::optional<DynamicAdjacencyParams> adjacency;
  FeedForwardParams ffn;
  LayerNormParams norm;
};

/// Mixes node features with an [N, N] (or [..., N, N]) matrix:
/// out[..., i, p, c] = sum_j m[..., i, j] x[..., j, p, c].
Tensor propagate(const Tensor& m, const Tensor& x);

/// Sum over k of P_f^k X W_k1 + P_b^k X W_k2 + A_dyn^k X W_k3, with powers
/// applied as k successive propagation steps. `a_dynamic` may be undefined
/// when the dynamic term is ablated. x: [..., N, P, C_in].
Tensor dynamic_diffusion_conv(const Tensor& x, const DetectorGraph& graph, const Tensor& a_dynamic,
                              const DsgcnParams& params);

/// Recomputes the dynamic adjacency from x, runs the diffusion convolution
/// and wraps it in the FFN block.
Tensor dsgcn_forward(const Tensor& x, const DetectorGraph& graph, const DsgcnParams& params,
                     const ForwardContext& ctx);

}  // namespace dnet
