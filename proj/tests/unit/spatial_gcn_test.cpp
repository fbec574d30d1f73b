#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "detectornet/error.hpp"
#include "detectornet/ops.hpp"
#include "detectornet/spatial_gcn.hpp"
#include "reference.hpp"
#include "test_support.hpp"

namespace dnet {
namespace {

using testing::fd_max_rel_error;
using testing::max_abs_diff;
using testing::param;
using testing::random_tensor;

struct Weights {
  std::size_t c_in, c_out;
};

DsgcnParams random_dsgcn(std::size_t n, std::size_t p, Weights w, std::size_t order, std::uint64_t seed,
                         bool with_static = true, bool with_dynamic = true) {
  DsgcnParams d;
  d.order = order;
  for (std::size_t k = 0; k <= order; ++k) {
    if (with_static) {
      d.forward.push_back(param({w.c_in, w.c_out}, seed + 10 * k));
      d.backward.push_back(param({w.c_in, w.c_out}, seed + 10 * k + 1));
    }
    if (with_dynamic) d.dynamic.push_back(param({w.c_in, w.c_out}, seed + 10 * k + 2));
  }
  if (with_dynamic) {
    d.adjacency = DynamicAdjacencyParams{param({n, 3}, seed + 100),          param({n, 3}, seed + 101),
                                         param({n, n}, seed + 102),          param({n, n}, seed + 103),
                                         param({p * w.c_in, w.c_in}, seed + 104), param({p * w.c_in, w.c_in}, seed + 105)};
  }
  d.ffn = {param({w.c_out, 2 * w.c_out}, seed + 106), param({2 * w.c_out}, seed + 107),
           param({2 * w.c_out, w.c_out}, seed + 108), param({w.c_out}, seed + 109)};
  d.norm = {param({w.c_out}, seed + 110, 0.5, 1.5), param({w.c_out}, seed + 111)};
  return d;
}

ref::Spatial ref_spatial(const DsgcnParams& d) {
  ref::Spatial s;
  s.order = d.order;
  for (const auto& t : d.forward) s.forward.push_back(ref::from_tensor(t));
  for (const auto& t : d.backward) s.backward.push_back(ref::from_tensor(t));
  for (const auto& t : d.dynamic) s.dynamic.push_back(ref::from_tensor(t));
  if (d.adjacency) {
    const auto& a = *d.adjacency;
    s.adjacency = ref::DynamicAdj{ref::from_tensor(a.e1),    ref::from_tensor(a.e2),    ref::from_tensor(a.w_att),
                                  ref::from_tensor(a.w_adp), ref::from_tensor(a.query), ref::from_tensor(a.key)};
  }
  s.ffn = {ref::from_tensor(d.ffn.w1), ref::from_tensor(d.ffn.b1),   ref::from_tensor(d.ffn.w2),
           ref::from_tensor(d.ffn.b2), ref::from_tensor(d.norm.gain), ref::from_tensor(d.norm.bias)};
  return s;
}

DetectorGraph random_graph(std::size_t n, std::uint64_t seed) {
  Tensor a = random_tensor({n, n}, seed, 0, 1);
  auto v = a.mutable_values();
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i] < 0.3) v[i] = 0.0;
  return DetectorGraph::from_adjacency(a);
}

Tensor random_row_stochastic(std::size_t n, std::uint64_t seed) {
  return softmax(random_tensor({n, n}, seed, -2, 2), -1);
}

TEST(DiffusionConv, OrderZeroIsSumOfIdentityTerms) {
  const std::size_t n = 4;
  DsgcnParams d = random_dsgcn(n, 3, {3, 2}, 0, 1);
  Tensor x = random_tensor({n, 3, 3}, 2);
  Tensor z = dynamic_diffusion_conv(x, random_graph(n, 3), random_row_stochastic(n, 4), d);
  Tensor w = add(add(d.forward[0], d.backward[0]), d.dynamic[0]);
  EXPECT_LE(max_abs_diff(z, matmul(x, w)), 1e-13);
}

TEST(DiffusionConv, SingleNodeSumsAllOrders) {
  DsgcnParams d = random_dsgcn(1, 3, {2, 2}, 2, 5);
  Tensor x = random_tensor({1, 3, 2}, 6);
  auto g = DetectorGraph::from_adjacency(Tensor({1, 1}, 1.0));
  Tensor a_dyn({1, 1}, 1.0);
  Tensor w = Tensor({2, 2});
  for (std::size_t k = 0; k <= 2; ++k) w = add(w, add(add(d.forward[k], d.backward[k]), d.dynamic[k]));
  EXPECT_LE(max_abs_diff(dynamic_diffusion_conv(x, g, a_dyn, d), matmul(x, w)), 1e-13);
}

TEST(DiffusionConv, MatchesExplicitPowerSumOracle) {
  // Every N <= 5 and K <= 3, with channel changes.
  for (std::size_t n = 1; n <= 5; ++n)
    for (std::size_t order = 0; order <= 3; ++order) {
      const std::uint64_t seed = n * 10 + order;
      DsgcnParams d = random_dsgcn(n, 2, {3, 2}, order, seed);
      auto g = random_graph(n, seed + 1);
      Tensor a = random_row_stochastic(n, seed + 2);
      Tensor x = random_tensor({n, 2, 3}, seed + 3, -2, 2);
      auto expect = ref::diffusion(ref::signal_from(x), ref::from_tensor(g.forward_transition),
                                   ref::from_tensor(g.backward_transition), ref::from_tensor(a), ref_spatial(d));
      EXPECT_LE(max_abs_diff(dynamic_diffusion_conv(x, g, a, d), ref::flatten(expect)), 1e-10)
          << "n=" << n << " K=" << order;
    }
}

TEST(DiffusionConv, IterativePropagationEqualsExplicitPower) {
  const std::size_t n = 5;
  Tensor m = random_row_stochastic(n, 7);
  Tensor x = random_tensor({n, 3, 2}, 8);
  Tensor h = x;
  for (std::size_t k = 1; k <= 4; ++k) {
    h = propagate(m, h);
    const ref::Mat mk = ref::power(ref::from_tensor(m), k);
    ref::Mat xm(n, 6);
    xm.v = x.to_vector();
    EXPECT_LE(max_abs_diff(h, ref::mm(mk, xm).v), 1e-10) << "k=" << k;
  }
}

TEST(DiffusionConv, BatchedMatrixPerSample) {
  const std::size_t n = 3;
  DsgcnParams d = random_dsgcn(n, 2, {2, 2}, 2, 9);
  auto g = random_graph(n, 10);
  const Tensor mats[] = {reshape(random_row_stochastic(n, 11), {1, n, n}), reshape(random_row_stochastic(n, 12), {1, n, n})};
  Tensor a = concat(mats, 0);
  Tensor x = random_tensor({2, n, 2, 2}, 13);
  Tensor z = dynamic_diffusion_conv(x, g, a, d);
  for (std::size_t b = 0; b < 2; ++b) {
    Tensor zb = dynamic_diffusion_conv(reshape(slice(x, 0, b, 1), {n, 2, 2}), g, reshape(mats[b], {n, n}), d);
    EXPECT_LE(max_abs_diff(z.values().subspan(b * zb.numel(), zb.numel()), zb.values()), 1e-14);
  }
}

TEST(DiffusionConv, ShapeErrors) {
  DsgcnParams d = random_dsgcn(3, 2, {2, 2}, 1, 14);
  EXPECT_THROW(dynamic_diffusion_conv(random_tensor({4, 2, 2}, 1), random_graph(3, 2), random_row_stochastic(3, 3), d),
               DimensionError);
  d.forward.pop_back();
  EXPECT_THROW(dynamic_diffusion_conv(random_tensor({3, 2, 2}, 1), random_graph(3, 2), random_row_stochastic(3, 3), d),
               DimensionError);
  EXPECT_THROW(propagate(Tensor({2, 2}), Tensor({3, 2, 2})), DimensionError);
}

TEST(DiffusionConv, ConvWeightCountIsLinearInOrder) {
  for (std::size_t order = 0; order <= 4; ++order) {
    DsgcnParams d = random_dsgcn(3, 2, {4, 5}, order, 15);
    std::size_t count = 0;
    for (const auto* w : {&d.forward, &d.backward, &d.dynamic})
      for (const auto& t : *w) count += t.numel();
    EXPECT_EQ(count, 3 * (order + 1) * 4 * 5);
  }
}

TEST(Dsgcn, ZeroWeightsGiveNormBias) {
  const std::size_t n = 3;
  DsgcnParams d = random_dsgcn(n, 2, {2, 2}, 2, 16);
  for (auto* w : {&d.forward, &d.backward, &d.dynamic})
    for (auto& t : *w) t = Tensor(t.shape());
  d.ffn = {Tensor({2, 4}), Tensor({4}), Tensor({4, 2}), Tensor({2})};
  Tensor y = dsgcn_forward(random_tensor({n, 2, 2}, 17), random_graph(n, 18), d, {});
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y.values()[i], d.norm.bias.values()[i % 2]);
}

TEST(Dsgcn, WithoutDynamicTermMatchesTwoTermOracle) {
  const std::size_t n = 4;
  DsgcnParams d = random_dsgcn(n, 3, {2, 3}, 2, 19, true, false);
  auto g = random_graph(n, 20);
  Tensor x = random_tensor({n, 3, 2}, 21);
  auto expect = ref::dsgcn(ref::signal_from(x), ref::from_tensor(g.forward_transition),
                           ref::from_tensor(g.backward_transition), ref_spatial(d));
  EXPECT_LE(max_abs_diff(dsgcn_forward(x, g, d, {}), ref::flatten(expect)), 1e-10);
}

TEST(Dsgcn, WithoutStaticTermsMatchesOracle) {
  const std::size_t n = 4;
  DsgcnParams d = random_dsgcn(n, 3, {2, 2}, 2, 22, false, true);
  auto g = random_graph(n, 23);
  Tensor x = random_tensor({n, 3, 2}, 24);
  auto expect = ref::dsgcn(ref::signal_from(x), ref::from_tensor(g.forward_transition),
                           ref::from_tensor(g.backward_transition), ref_spatial(d));
  EXPECT_LE(max_abs_diff(dsgcn_forward(x, g, d, {}), ref::flatten(expect)), 1e-10);
}

TEST(Dsgcn, FullForwardMatchesStraightLineOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const std::size_t n = 3;
    DsgcnParams d = random_dsgcn(n, 6, {4, 4}, 2, 30 + seed * 1000);
    auto g = random_graph(n, seed + 31);
    Tensor x = random_tensor({n, 6, 4}, seed + 32, -2, 2);
    auto expect = ref::dsgcn(ref::signal_from(x), ref::from_tensor(g.forward_transition),
                             ref::from_tensor(g.backward_transition), ref_spatial(d));
    EXPECT_LE(max_abs_diff(dsgcn_forward(x, g, d, {}), ref::flatten(expect)), 1e-10);
  }
}

TEST(Dsgcn, NodePermutationEquivariance) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const std::size_t n = 2 + seed % 5, p = 3, c = 2;
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 gen(seed);
    std::shuffle(perm.begin(), perm.end(), gen);

    auto permute_rows = [&](const Tensor& t, bool square) {
      const std::size_t inner = t.numel() / n;
      std::vector<double> out(t.numel());
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < inner; ++k) out[i * inner + k] = t.values()[perm[i] * inner + k];
      if (square) {
        std::vector<double> cols(out.size());
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j) cols[i * n + j] = out[i * n + perm[j]];
        out = cols;
      }
      return Tensor(t.shape(), out);
    };

    DsgcnParams d = random_dsgcn(n, p, {c, c}, 2, seed * 7 + 1);
    DsgcnParams dp = d;
    auto& a = *dp.adjacency;
    a.e1 = permute_rows(a.e1, false);
    a.e2 = permute_rows(a.e2, false);
    a.w_att = permute_rows(a.w_att, true);
    a.w_adp = permute_rows(a.w_adp, true);
    Tensor adj = random_graph(n, seed + 2).adjacency;
    Tensor x = random_tensor({n, p, c}, seed + 3);

    Tensor y = dsgcn_forward(x, DetectorGraph::from_adjacency(adj), d, {});
    Tensor yp = dsgcn_forward(permute_rows(x, false), DetectorGraph::from_adjacency(permute_rows(adj, true)), dp, {});
    EXPECT_LE(max_abs_diff(yp, permute_rows(y, false)), 1e-12) << "seed " << seed;
  }
}

TEST(Dsgcn, GradientsOfAllParametersAndInput) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const std::size_t n = 3;
    DsgcnParams d = random_dsgcn(n, 3, {2, 3}, 2, 40 + seed * 1000);
    auto g = random_graph(n, seed + 41);
    Tensor x = param({n, 3, 2}, seed + 42);
    Tensor readout = random_tensor({n, 3, 3}, seed + 43);
    std::vector<Tensor> all{x, d.ffn.w1, d.ffn.b1, d.ffn.w2, d.ffn.b2, d.norm.gain, d.norm.bias};
    for (const auto* w : {&d.forward, &d.backward, &d.dynamic}) all.insert(all.end(), w->begin(), w->end());
    const auto& a = *d.adjacency;
    all.insert(all.end(), {a.e1, a.e2, a.w_att, a.w_adp, a.query, a.key});
    auto f = [&] { return sum(mul(dsgcn_forward(x, g, d, {}), readout)); };
    EXPECT_LE(fd_max_rel_error(f, all), 1e-4) << "seed " << seed;
  }
}

TEST(Dsgcn, DynamicTermWithoutAdjacencyParamsIsConfigError) {
  DsgcnParams d = random_dsgcn(3, 2, {2, 2}, 1, 50);
  d.adjacency.reset();
  EXPECT_THROW(dsgcn_forward(random_tensor({3, 2, 2}, 1), random_graph(3, 2), d, {}), ConfigError);
}

}  // namespace
}  // namespace dnet
