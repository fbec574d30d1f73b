#include <gmock/gmock.h>
#include <gtest/gtest.h>

#include "detectornet/error.hpp"
#include "detectornet/gradcheck.hpp"
#include "detectornet/ops.hpp"
#include "test_support.hpp"

namespace dnet {
namespace {

using testing::random_tensor;

class ModelGradients : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(ModelGradients, TinyConfigWithinTolerance) {
  GradCheckReport r = gradient_check_model(tiny_gradcheck_config(), GetParam());
  EXPECT_LE(r.max_rel_error, 1e-4) << r.to_text();
  EXPECT_TRUE(r.failures(1e-4).empty());
  EXPECT_FALSE(r.params.empty());
}

INSTANTIATE_TEST_SUITE_P(Seeds, ModelGradients, ::testing::Range<std::uint64_t>(0, 5));

TEST(GradCheck, CoversEveryParameter) {
  ModelConfig c = tiny_gradcheck_config();
  GradCheckReport r = gradient_check_model(c, 0);
  DetectorNet model(c, DetectorGraph::from_adjacency(Tensor({3, 3}, 1.0)));
  EXPECT_EQ(r.params.size(), model.params().size());
  for (const auto& p : r.params) {
    const std::size_t numel = model.params().get(p.name).numel();
    EXPECT_EQ(p.coords_checked, std::min<std::size_t>(numel, 32)) << p.name;
  }
}

TEST(GradCheck, ReportIsDeterministic) {
  GradCheckReport a = gradient_check_model(tiny_gradcheck_config(), 1);
  GradCheckReport b = gradient_check_model(tiny_gradcheck_config(), 1);
  ASSERT_EQ(a.params.size(), b.params.size());
  for (std::size_t i = 0; i < a.params.size(); ++i) EXPECT_EQ(a.params[i].max_rel_error, b.params[i].max_rel_error);
}

TEST(GradCheck, AblatedConfigsPass) {
  for (const char* flag : {"without_mta", "without_gta", "without_da", "without_sa"}) {
    ModelConfig c = tiny_gradcheck_config();
    c.ablation.enable(flag);
    EXPECT_LE(gradient_check_model(c, 2).max_rel_error, 1e-4) << flag;
  }
}

/// x^2 with a backward rule that is off by a factor 1.5.
Tensor broken_square(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * x.values()[i];
  return Tensor::from_op(
      x.shape(), std::move(out), {x},
      [](const BackwardContext& ctx) {
        auto gx = ctx.input_grad(0);
        const auto g = ctx.out_grad();
        const auto v = ctx.input_value(0);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 3.0 * v[i] * g[i];
      },
      "broken_square");
}

TEST(GradCheck, DetectsWrongBackwardRule) {
  ParamStore store;
  Tensor good = store.add("good", random_tensor({4}, 1));
  Tensor bad = store.add("bad", random_tensor({4}, 2));
  auto loss = [&] { return add(sum(mul(good, good)), sum(broken_square(bad))); };
  GradCheckReport r = check_gradients(loss, store);
  EXPECT_THAT(r.failures(1e-4), ::testing::ElementsAre("bad"));
  EXPECT_GT(r.max_rel_error, 0.3);
  EXPECT_THAT(r.to_text(), ::testing::HasSubstr("bad"));
}

TEST(GradCheck, ReluKinkInsideStencilIsRemeasured) {
  ParamStore store;
  // 3e-6 sits inside the h = 1e-5 stencil of relu's kink, outside the h/16 one
  Tensor p = store.add("p", Tensor({2}, {3e-6, 0.7}));
  GradCheckReport r = check_gradients([&] { return sum(relu(p)); }, store);
  EXPECT_EQ(r.kink_coords, 1u);
  EXPECT_LE(r.max_rel_error, 1e-9);
}

TEST(GradCheck, ParameterWithoutGradientIsStateError) {
  ParamStore store;
  Tensor used = store.add("used", random_tensor({2}, 1));
  store.add("unused", random_tensor({2}, 2));
  EXPECT_THROW(check_gradients([&] { return sum(used); }, store), StateError);
}

}  // namespace
}  // namespace dnet
