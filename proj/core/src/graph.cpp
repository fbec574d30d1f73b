#include "detectornet/graph.hpp"

#include <cmath>

#include "detectornet/error.hpp"
#include "detectornet/ops.hpp"

namespace dnet {

namespace {

void require_square(const Tensor& m, std::string_view what) {
  if (m.rank() != 2 || m.dim(0) != m.dim(1)) {
    throw DimensionError(std::string(what) + " must be square, got " + shape_to_string(m.shape()));
  }
}

Tensor row_normalize(std::span<const double> a, std::size_t n, bool transpose) {
  Tensor out(Shape{n, n});
  auto o = out.mutable_values();
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += transpose ? a[j * n + i] : a[i * n + j];
    if (total == 0.0) continue;
    for (std::size_t j = 0; j < n; ++j) o[i * n + j] = (transpose ? a[j * n + i] : a[i * n + j]) / total;
  }
  return out;
}

}  // namespace

std::pair<Tensor, Tensor> build_transitions(const Tensor& adjacency) {
  require_square(adjacency, "adjacency");
  const auto a = adjacency.values();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || a[i] < 0.0) {
      const std::size_t n = adjacency.dim(0);
      throw ValidationError("adjacency entry (" + std::to_string(i / n) + ", " + std::to_string(i % n) +
                            ") must be finite and non-negative, got " + std::to_string(a[i]));
    }
  }
  const std::size_t n = adjacency.dim(0);
  return {row_normalize(a, n, false), row_normalize(a, n, true)};
}

DetectorGraph DetectorGraph::from_adjacency(const Tensor& adjacency) {
  auto [pf, pb] = build_transitions(adjacency);
  return DetectorGraph{adjacency.dim(0), adjacency.detach(), pf, pb};
}

Tensor adaptive_adjacency(const Tensor& e1, const Tensor& e2) {
  if (e1.rank() != 2 || e2.rank() != 2 || e1.shape() != e2.shape()) {
    throw DimensionError("node embeddings must share shape [N, d_e], got " + shape_to_string(e1.shape()) +
                         " and " + shape_to_string(e2.shape()));
  }
  return softmax(matmul(e1, transpose_last2(e2)), -1);
}

Tensor attention_adjacency(const Tensor& x, const Tensor& query_proj, const Tensor& key_proj) {
  if (x.rank() < 3) throw DimensionError("attention_adjacency expects [..., N, P, C], got " + shape_to_string(x.shape()));
  const std::size_t flat = x.dim(-2) * x.dim(-1);
  if (query_proj.rank() != 2 || key_proj.shape() != query_proj.shape() || query_proj.dim(0) != flat) {
    throw DimensionError("spatial query/key projections " + shape_to_string(query_proj.shape()) + "/" +
                         shape_to_string(key_proj.shape()) + " do not fit node history width " +
                         std::to_string(flat));
  }
  Shape flat_shape(x.shape().begin(), x.shape().end() - 2);
  flat_shape.push_back(flat);
  Tensor nodes = reshape(x, flat_shape);
  Tensor q = matmul(nodes, query_proj);
  Tensor k = matmul(nodes, key_proj);
  const double d_k = static_cast<double>(key_proj.dim(1));
  return scale(matmul(q, transpose_last2(k)), 1.0 / std::sqrt(d_k));
}

Tensor fuse_dynamic_adjacency(const Tensor& att, const Tensor& adp, const Tensor& w_att, const Tensor& w_adp) {
  if (att.rank() < 2 || att.dim(-1) != att.dim(-2)) {
    throw DimensionError("attention adjacency must end in [N, N], got " + shape_to_string(att.shape()));
  }
  const Shape square{att.dim(-1), att.dim(-1)};
  for (const Tensor* m : {&adp, &w_att, &w_adp}) {
    if (m->shape() != square) {
      throw DimensionError("dynamic adjacency operand " + shape_to_string(m->shape()) + " must be " +
                           shape_to_string(square));
    }
  }
  return softmax(add(mul(w_att, att), mul(w_adp, adp)), -1);
}

Tensor dynamic_adjacency(const Tensor& x, const DynamicAdjacencyParams& params) {
  Tensor att = attention_adjacency(x, params.query, params.key);
  Tensor adp = adaptive_adjacency(params.e1, params.e2);
  return fuse_dynamic_adjacency(att, adp, params.w_att, params.w_adp);
}

}  // namespace dnet
