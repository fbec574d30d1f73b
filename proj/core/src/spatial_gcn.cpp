#include "detectornet/spatial_gcn.hpp"

#include "detectornet/error.hpp"
#include "detectornet/ops.hpp"

namespace dnet {

Tensor propagate(const Tensor& m, const Tensor& x) {
  if (x.rank() < 3) throw DimensionError("propagate expects [..., N, P, C], got " + shape_to_string(x.shape()));
  const std::size_t n = x.dim(-3);
  if (m.rank() < 2 || m.dim(-1) != n || m.dim(-2) != n) {
    throw DimensionError("node mixing matrix " + shape_to_string(m.shape()) + " does not match " +
                         std::to_string(n) + " nodes of " + shape_to_string(x.shape()));
  }
  Shape flat(x.shape().begin(), x.shape().end() - 2);
  flat.push_back(x.dim(-2) * x.dim(-1));
  return reshape(matmul(m, reshape(x, flat)), x.shape());
}

namespace {

void accumulate_diffusion(Tensor& z, const Tensor& x, const Tensor& m, const std::vector<Tensor>& weights) {
  Tensor h = x;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (k > 0) h = propagate(m, h);
    Tensor term = linear(h, weights[k]);
    z = z.defined() ? add(z, term) : term;
  }
}

}  // namespace

Tensor dynamic_diffusion_conv(const Tensor& x, const DetectorGraph& graph, const Tensor& a_dynamic,
                              const DsgcnParams& params) {
  const std::size_t terms = params.order + 1;
  for (const auto* w : {&params.forward, &params.backward, &params.dynamic}) {
    if (!w->empty() && w->size() != terms) {
      throw DimensionError("diffusion of order " + std::to_string(params.order) + " needs " + std::to_string(terms) +
                           " weights per term, got " + std::to_string(w->size()));
    }
  }
  if (x.rank() < 3 || x.dim(-3) != graph.n_nodes) {
    throw DimensionError("graph has " + std::to_string(graph.n_nodes) + " nodes but input is " +
                         shape_to_string(x.shape()));
  }
  Tensor z;
  if (!params.forward.empty()) accumulate_diffusion(z, x, graph.forward_transition, params.forward);
  if (!params.backward.empty()) accumulate_diffusion(z, x, graph.backward_transition, params.backward);
  if (!params.dynamic.empty()) {
    if (!a_dynamic.defined()) throw StateError("dynamic diffusion term needs a dynamic adjacency");
    accumulate_diffusion(z, x, a_dynamic, params.dynamic);
  }
  if (!z.defined()) throw ConfigError("spatial convolution has no diffusion term left");
  return z;
}

Tensor dsgcn_forward(const Tensor& x, const DetectorGraph& graph, const DsgcnParams& params,
                     const ForwardContext& ctx) {
  Tensor a_dynamic;
  if (!params.dynamic.empty()) {
    if (!params.adjacency) throw ConfigError("dynamic diffusion term is enabled without adjacency parameters");
    a_dynamic = dynamic_adjacency(x, *params.adjacency);
  }
  Tensor z = dynamic_diffusion_conv(x, graph, a_dynamic, params);
  return feed_forward_block(z, params.ffn, params.norm, ctx);
}

}  // namespace dnet
