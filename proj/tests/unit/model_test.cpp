#include <chrono>
#include <cmath>
#include <random>

#include <gmock/gmock.h>
#include <gtest/gtest.h>

#include "detectornet/adam.hpp"
#include "detectornet/error.hpp"
#include "detectornet/model.hpp"
#include "detectornet/ops.hpp"
#include "detectornet/random.hpp"
#include "reference.hpp"
#include "test_support.hpp"

namespace dnet {
namespace {

using ::testing::HasSubstr;
using testing::max_abs_diff;
using testing::param;
using testing::random_tensor;

ModelConfig small_config(std::size_t n = 3) {
  ModelConfig c;
  c.nodes = n;
  c.input_len = 6;
  c.output_len = 3;
  c.input_dim = 2;
  c.hidden = 4;
  c.layers = 2;
  c.diffusion_steps = 2;
  c.embed_dim = 3;
  c.predictor_hidden = 5;
  return c;
}

DetectorGraph toy_graph(std::size_t n, std::uint64_t seed = 1) {
  Tensor a = random_tensor({n, n}, seed, 0, 1);
  return DetectorGraph::from_adjacency(a);
}

/// Whole model recomputed from the parameter store with plain loops.
std::vector<double> reference_forward(const DetectorNet& model, const Tensor& window) {
  const auto& cfg = model.config();
  const auto& s = model.params();
  const ref::Mat pf = ref::from_tensor(model.graph().forward_transition);
  const ref::Mat pb = ref::from_tensor(model.graph().backward_transition);
  ref::Signal x;
  for (const auto& node : ref::signal_from(window)) {
    x.push_back(ref::plus_row(ref::mm(node, ref::get(s, "input.weight")), ref::get(s, "input.bias")));
  }
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    x = ref::mtam(x, ref::temporal_from(s, l, cfg.beta, cfg.gamma));
    x = ref::dsgcn(x, pf, pb, ref::spatial_from(s, l, cfg.diffusion_steps));
  }
  ref::Predictor p{ref::get(s, "predictor.w1"), ref::get(s, "predictor.b1"), ref::get(s, "predictor.w2"),
                   ref::get(s, "predictor.b2")};
  return ref::flatten(ref::predictor(x, p, cfg.output_len));
}

// --- input projection ---

TEST(InputProjection, IdentityWeights) {
  Tensor x = random_tensor({3, 4, 2}, 1);
  Tensor eye({2, 2}, {1, 0, 0, 1});
  EXPECT_EQ(input_projection(x, eye, Tensor({2})).to_vector(), x.to_vector());
}

TEST(InputProjection, ZeroWeightsGiveBias) {
  Tensor b({3}, {0.5, -1, 2});
  Tensor y = input_projection(random_tensor({2, 4, 2}, 2), Tensor({2, 3}), b);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y.values()[i], b.values()[i % 3]);
}

TEST(InputProjection, MatchesChannelMatmulOracle) {
  Tensor x = random_tensor({3, 4, 2}, 3), w = random_tensor({2, 5}, 4), b = random_tensor({5}, 5);
  std::vector<double> expect = testing::loop_matmul(x.to_vector(), w.to_vector(), 12, 2, 5);
  for (std::size_t i = 0; i < expect.size(); ++i) expect[i] += b.values()[i % 5];
  EXPECT_LE(max_abs_diff(input_projection(x, w, b), expect), 1e-12);
  EXPECT_THROW(input_projection(x, Tensor({3, 5}), b), DimensionError);
}

// --- predictor ---

TEST(Predictor, EqualLengthsKeepChannelWidth) {
  PredictorParams p{random_tensor({4, 6}, 1), random_tensor({6}, 2), random_tensor({6, 1}, 3), random_tensor({1}, 4)};
  EXPECT_EQ(predictor_head(random_tensor({3, 12, 4}, 5), p, 12).shape(), (Shape{3, 12, 1}));
}

TEST(Predictor, ZeroWeightsGiveFinalBias) {
  PredictorParams p{Tensor({8, 6}), Tensor({6}), Tensor({6, 1}), Tensor({1}, 3.25)};
  Tensor y = predictor_head(random_tensor({2, 6, 4}, 6), p, 3);
  for (double v : y.values()) EXPECT_EQ(v, 3.25);
}

TEST(Predictor, MatchesRegroupAndTwoAffineOracle) {
  PredictorParams p{random_tensor({8, 6}, 7), random_tensor({6}, 8), random_tensor({6, 2}, 9), random_tensor({2}, 10)};
  Tensor x = random_tensor({2, 6, 4}, 11);
  ref::Predictor rp{ref::from_tensor(p.w1), ref::from_tensor(p.b1), ref::from_tensor(p.w2), ref::from_tensor(p.b2)};
  EXPECT_LE(max_abs_diff(predictor_head(x, p, 3), ref::flatten(ref::predictor(ref::signal_from(x), rp, 3))), 1e-12);
}

TEST(Predictor, IndivisibleRegroupIsConfigError) {
  PredictorParams p{Tensor({4, 2}), Tensor({2}), Tensor({2, 1}), Tensor({1})};
  EXPECT_THROW(predictor_head(Tensor({2, 5, 1}), p, 3), ConfigError);
}

// --- masked MAE ---

TEST(MaskedMae, ZerosInTruthAreExcluded) {
  Tensor truth({2}, {1, 0});
  Tensor mask({2}, {1, 0});
  MaskedLoss l = masked_mae_loss(Tensor({2}, {2, 4}), truth, mask);
  EXPECT_EQ(l.value.item(), 1.0);
  EXPECT_EQ(l.count, 1u);
}

TEST(MaskedMae, IdenticalIsZero) {
  Tensor t = random_tensor({3, 4}, 1);
  EXPECT_EQ(masked_mae_loss(t, t, Tensor({3, 4}, 1.0)).value.item(), 0.0);
}

TEST(MaskedMae, MatchesFlatLoop) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Tensor p = random_tensor({2, 3, 4, 1}, seed), t = random_tensor({2, 3, 4, 1}, seed + 100, 0, 2);
    Tensor m = random_tensor({2, 3, 4, 1}, seed + 200, 0, 1);
    for (auto& v : m.mutable_values()) v = v < 0.3 ? 0.0 : 1.0;
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < p.numel(); ++i)
      if (m.values()[i] != 0.0) {
        total += std::fabs(p.values()[i] - t.values()[i]);
        ++count;
      }
    EXPECT_NEAR(masked_mae_loss(p, t, m).value.item(), total / static_cast<double>(count), 1e-12);
  }
}

TEST(MaskedMae, EmptyMaskIsZeroWithFlag) {
  MaskedLoss l = masked_mae_loss(Tensor({3}, 1.0), Tensor({3}, 2.0), Tensor({3}));
  EXPECT_TRUE(l.empty_mask);
  EXPECT_EQ(l.value.item(), 0.0);
  EXPECT_THROW(masked_mae_loss(Tensor({3}), Tensor({2}), Tensor({3})), DimensionError);
}

// --- config ---

TEST(ModelConfig, ValidationRules) {
  ModelConfig c = small_config();
  EXPECT_NO_THROW(c.validate());
  c.input_len = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  c.ablation.without_mta = true;
  c.output_len = 4;
  EXPECT_NO_THROW(c.validate());
  c.ablation.without_gta = true;
  EXPECT_THROW(c.validate(), ConfigError);

  ModelConfig d = small_config();
  d.ablation.without_da = d.ablation.without_sa = true;
  EXPECT_THROW(d.validate(), ConfigError);
  ModelConfig e = small_config();
  e.output_len = 5;
  EXPECT_THROW(e.validate(), ConfigError);
  ModelConfig f = small_config();
  f.nodes = 0;
  EXPECT_THROW(f.validate(), ConfigError);
}

TEST(ModelConfig, JsonRoundTrip) {
  ModelConfig c = small_config();
  c.ablation.without_da = true;
  c.learnable_fusion = true;
  c.dropout = 0.125;
  ModelConfig back = ModelConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_TRUE(back.same_architecture(c));
  back.dropout = 0.5;
  EXPECT_TRUE(back.same_architecture(c));
  back.ablation.without_da = false;
  EXPECT_FALSE(back.same_architecture(c));
}

TEST(Ablation, EnableByName) {
  Ablation a;
  a.enable("without_gta");
  EXPECT_TRUE(a.without_gta);
  EXPECT_THAT(a.enabled_flags(), ::testing::ElementsAre("without_gta"));
  EXPECT_THROW(a.enable("without_everything"), ConfigError);
}

// --- forward ---

TEST(DetectorNet, DefaultGeometryShape) {
  ModelConfig c;
  c.nodes = 207;
  DetectorNet model(c, toy_graph(207));
  Tensor y = model.forward(random_tensor({207, 12, 2}, 1), Mode::eval);
  EXPECT_EQ(y.shape(), (Shape{207, 12, 1}));
}

TEST(DetectorNet, MinimalConfigSmoke) {
  ModelConfig c = small_config(1);
  c.input_len = c.output_len = 3;
  c.layers = 1;
  DetectorNet model(c, DetectorGraph::from_adjacency(Tensor({1, 1}, 1.0)));
  Tensor y = model.forward(random_tensor({1, 3, 2}, 2), Mode::eval);
  ASSERT_EQ(y.shape(), (Shape{1, 3, 1}));
  for (double v : y.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(DetectorNet, MatchesMonolithicReference) {
  for (bool learnable : {false, true}) {
    ModelConfig c = small_config();
    c.learnable_fusion = learnable;
    c.beta = 0.7;
    c.gamma = 1.3;
    DetectorNet model(c, toy_graph(3));
    Tensor w = random_tensor({3, 6, 2}, 3, -2, 2);
    EXPECT_LE(max_abs_diff(model.forward(w, Mode::eval), reference_forward(model, w)), 1e-9);
  }
}

class AblatedModel : public ::testing::TestWithParam<const char*> {};

TEST_P(AblatedModel, MatchesMonolithicReference) {
  ModelConfig c = small_config();
  c.ablation.enable(GetParam());
  DetectorNet model(c, toy_graph(3));
  Tensor w = random_tensor({3, 6, 2}, 4, -2, 2);
  EXPECT_LE(max_abs_diff(model.forward(w, Mode::eval), reference_forward(model, w)), 1e-9);
}

TEST_P(AblatedModel, HasFewerParameters) {
  ModelConfig full = small_config();
  ModelConfig ablated = full;
  ablated.ablation.enable(GetParam());
  EXPECT_LT(parameter_count(ablated), parameter_count(full));
  EXPECT_EQ(DetectorNet(ablated, toy_graph(3)).params().scalar_count(), parameter_count(ablated));
}

TEST_P(AblatedModel, OneTrainingStepChangesLoss) {
  ModelConfig c = small_config();
  c.ablation.enable(GetParam());
  DetectorNet model(c, toy_graph(3));
  Tensor w = random_tensor({4, 3, 6, 2}, 5);
  Tensor truth = random_tensor({4, 3, 3, 1}, 6, 1, 2);
  Tensor mask({4, 3, 3, 1}, 1.0);
  Rng rng(7);
  AdamState adam(AdamOptions{1e-2});
  MaskedLoss before = masked_mae_loss(model.forward(w, Mode::train, &rng), truth, mask);
  before.value.backward();
  adam_step(model.params(), adam);
  NoGradGuard guard;
  const double after = masked_mae_loss(model.forward(w, Mode::eval), truth, mask).value.item();
  const double before_eval = before.value.item();
  EXPECT_TRUE(std::isfinite(after));
  EXPECT_NE(after, before_eval);
}

INSTANTIATE_TEST_SUITE_P(Flags, AblatedModel,
                         ::testing::Values("without_mta", "without_gta", "without_da", "without_sa"));

TEST(Ablation, WithoutDynamicAdjacencyCount) {
  // Per layer: the (K+1) W_k3 matrices, plus the adjacency parameters that only feed them.
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ModelConfig full = small_config(2 + seed);
    full.layers = 1 + seed % 3;
    full.diffusion_steps = seed % 4;
    ModelConfig no_da = full;
    no_da.ablation.without_da = true;
    const std::size_t c = full.hidden, k = full.diffusion_steps, n = full.nodes, p = full.input_len;
    const std::size_t per_layer = (k + 1) * c * c + 2 * n * full.embed_dim + 2 * n * n + 2 * p * c * c;
    EXPECT_EQ(parameter_count(full) - parameter_count(no_da), full.layers * per_layer);
  }
}

TEST(Ablation, WithoutMtaAcceptsLengthNotDivisibleByThree) {
  ModelConfig c = small_config();
  c.ablation.without_mta = true;
  c.input_len = c.output_len = 4;
  DetectorNet model(c, toy_graph(3));
  EXPECT_EQ(model.forward(random_tensor({3, 4, 2}, 8), Mode::eval).shape(), (Shape{3, 4, 1}));
}

TEST(Ablation, NamedParametersFollowFlags) {
  ModelConfig c = small_config();
  c.ablation.without_mta = true;
  c.ablation.without_sa = true;
  DetectorNet model(c, toy_graph(3));
  EXPECT_FALSE(model.params().contains("layer0.temporal.long.wq"));
  EXPECT_TRUE(model.params().contains("layer0.temporal.global.wq"));
  EXPECT_FALSE(model.params().contains("layer1.spatial.k0.forward"));
  EXPECT_TRUE(model.params().contains("layer1.spatial.k2.dynamic"));
}

TEST(ParameterCount, FormulaMatchesStoreForRandomConfigs) {
  std::mt19937_64 gen(2024);
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(gen); };
  const char* flags[] = {"without_mta", "without_gta", "without_da", "without_sa"};
  for (int i = 0; i < 20; ++i) {
    ModelConfig c;
    c.nodes = pick(1, 6);
    c.input_len = 3 * pick(1, 3);
    c.output_len = c.input_len;
    c.input_dim = pick(1, 3);
    c.hidden = pick(1, 6);
    c.layers = pick(1, 3);
    c.diffusion_steps = pick(0, 3);
    c.embed_dim = pick(1, 4);
    c.ffn_factor = pick(1, 3);
    c.predictor_hidden = pick(1, 8);
    c.output_dim = pick(1, 2);
    c.learnable_fusion = pick(0, 1) == 1;
    if (pick(0, 1) == 1) c.ablation.enable(flags[pick(0, 3)]);
    DetectorNet model(c, toy_graph(c.nodes, i));
    EXPECT_EQ(model.params().scalar_count(), parameter_count(c)) << c.to_json().dump();
  }
}

TEST(DetectorNet, OutputShapeForRandomValidConfigs) {
  std::mt19937_64 gen(77);
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(gen); };
  for (int i = 0; i < 20; ++i) {
    ModelConfig c;
    c.nodes = pick(1, 5);
    c.input_len = 3 * pick(1, 4);
    c.hidden = pick(1, 5);
    // any Q dividing C*P
    std::vector<std::size_t> divisors;
    for (std::size_t q = 1; q <= c.hidden * c.input_len; ++q)
      if ((c.hidden * c.input_len) % q == 0) divisors.push_back(q);
    c.output_len = divisors[pick(0, divisors.size() - 1)];
    c.input_dim = pick(1, 3);
    c.layers = pick(1, 2);
    c.diffusion_steps = pick(0, 2);
    c.output_dim = pick(1, 2);
    c.embed_dim = 2;
    c.predictor_hidden = 4;
    DetectorNet model(c, toy_graph(c.nodes, i));
    const std::size_t b = pick(1, 3);
    Tensor y = model.forward(random_tensor({b, c.nodes, c.input_len, c.input_dim}, i), Mode::eval);
    EXPECT_EQ(y.shape(), (Shape{b, c.nodes, c.output_len, c.output_dim}));
    for (double v : y.values()) ASSERT_TRUE(std::isfinite(v));
  }
}

TEST(DetectorNet, BatchedForwardMatchesPerSample) {
  DetectorNet model(small_config(), toy_graph(3));
  Tensor w = random_tensor({3, 3, 6, 2}, 9);
  Tensor y = model.forward(w, Mode::eval);
  for (std::size_t b = 0; b < 3; ++b) {
    Tensor yb = model.forward(reshape(slice(w, 0, b, 1), {3, 6, 2}), Mode::eval);
    EXPECT_LE(max_abs_diff(y.values().subspan(b * yb.numel(), yb.numel()), yb.values()), 1e-12);
  }
}

TEST(DetectorNet, EvalIsBitIdenticalAndSeedDeterminesInit) {
  DetectorNet a(small_config(), toy_graph(3));
  DetectorNet b(small_config(), toy_graph(3));
  Tensor w = random_tensor({3, 6, 2}, 10);
  EXPECT_EQ(a.forward(w, Mode::eval).to_vector(), a.forward(w, Mode::eval).to_vector());
  EXPECT_EQ(a.forward(w, Mode::eval).to_vector(), b.forward(w, Mode::eval).to_vector());
  ModelConfig other = small_config();
  other.seed = 43;
  EXPECT_NE(DetectorNet(other, toy_graph(3)).forward(w, Mode::eval).to_vector(), a.forward(w, Mode::eval).to_vector());
}

TEST(DetectorNet, ErrorsCarryLayerIndex) {
  DetectorNet model(small_config(), toy_graph(3));
  Tensor w = random_tensor({3, 6, 2}, 11);
  w.mutable_values()[5] = std::nan("");
  try {
    model.forward(w, Mode::eval);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_THAT(e.what(), HasSubstr("layer 0"));
  }
  EXPECT_THROW(model.forward(random_tensor({3, 5, 2}, 1), Mode::eval), DimensionError);
}

TEST(DetectorNet, GraphSizeMustMatchConfig) {
  EXPECT_THROW(DetectorNet(small_config(3), toy_graph(4)), ConfigError);
}

TEST(DetectorNet, LoadParametersChecksNamesAndShapes) {
  DetectorNet a(small_config(), toy_graph(3));
  ModelConfig other = small_config();
  other.seed = 5;
  DetectorNet b(other, toy_graph(3));
  std::vector<std::pair<std::string, Tensor>> named(a.params().begin(), a.params().end());
  b.load_parameters(named);
  Tensor w = random_tensor({3, 6, 2}, 12);
  EXPECT_EQ(a.forward(w, Mode::eval).to_vector(), b.forward(w, Mode::eval).to_vector());
  named.pop_back();
  EXPECT_THROW(b.load_parameters(named), FormatError);
  named.emplace_back("predictor.b2", Tensor({2}));
  EXPECT_THROW(b.load_parameters(named), FormatError);
}

TEST(Initialization, FollowsDocumentedScheme) {
  DetectorNet model(small_config(), toy_graph(3));
  const auto& s = model.params();
  for (double v : s.get("layer0.temporal.norm.gain").values()) EXPECT_EQ(v, 1.0);
  for (double v : s.get("layer0.temporal.norm.bias").values()) EXPECT_EQ(v, 0.0);
  for (double v : s.get("predictor.b1").values()) EXPECT_EQ(v, 0.0);
  for (double v : s.get("layer1.spatial.adjacency.w_att").values()) EXPECT_EQ(v, 1.0);
  const double a = std::sqrt(6.0 / (4 + 4));
  for (double v : s.get("layer1.spatial.k1.forward").values()) EXPECT_LE(std::fabs(v), a);
  double sq = 0.0;
  for (double v : s.get("layer0.spatial.adjacency.e1").values()) sq += v * v;
  EXPECT_LT(std::sqrt(sq / 9.0), 0.5);
}

}  // namespace
}  // namespace dnet
