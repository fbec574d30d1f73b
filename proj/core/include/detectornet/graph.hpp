#pragma once

#include <utility>

#include "detectornet/tensor.hpp"

namespace dnet {

/// Static road graph: the weighted adjacency and its two diffusion
/// transition matrices.
struct DetectorGraph {
  std::size_t n_nodes = 0;
  Tensor adjacency;
  /// rowNormalize(A): one forward diffusion step.
  Tensor forward_transition;
  /// rowNormalize(A^T): one backward diffusion step.
  Tensor backward_transition;

  static DetectorGraph from_adjacency(const Tensor& adjacency);
};

/// Row-normalized transition matrices (P_f, P_b) of a non-negative square
/// matrix. All-zero rows stay zero (no self loop is injected).
std::pair<Tensor, Tensor> build_transitions(const Tensor& adjacency);

/// Learned node-embedding adjacency, row-softmax(E1 E2^T).
Tensor adaptive_adjacency(const Tensor& e1, const Tensor& e2);

/// Input-dependent node-pair scores (unnormalized).
///
/// `x` is [..., N, P, C]; each node's P*C history is flattened, projected by
/// `query_proj` / `key_proj` ([P*C, d_k]) and scored as Q K^T / sqrt(d_k).
/// Returns [..., N, N].
Tensor attention_adjacency(const Tensor& x, const Tensor& query_proj, const Tensor& key_proj);

/// rowSoftmax(W_att * A_att + W_adp * A_adp) with elementwise products.
/// `att` may carry leading batch axes; the other three are [N, N].
Tensor fuse_dynamic_adjacency(const Tensor& att, const Tensor& adp, const Tensor& w_att, const Tensor& w_adp);

struct DynamicAdjacencyParams {
  Tensor e1;         // [N, d_e]
  Tensor e2;         // [N, d_e]
  Tensor w_att;      // [N, N]
  Tensor w_adp;      // [N, N]
  Tensor query;      // [P*C, d_k]
  Tensor key;        // [P*C, d_k]
};

/// Full dynamic adjacency for one layer input x: [..., N, P, C] -> [..., N, N].
Tensor dynamic_adjacency(const Tensor& x, const DynamicAdjacencyParams& params);

}  // namespace dnet
