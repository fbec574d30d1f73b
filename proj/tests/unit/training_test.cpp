#include <cmath>
#include <limits>

#include <gmock/gmock.h>
#include <gtest/gtest.h>

#include "detectornet/error.hpp"
#include "detectornet/ops.hpp"
#include "detectornet/synth.hpp"
#include "detectornet/training.hpp"

namespace dnet {
namespace {

using ::testing::HasSubstr;

struct Fixture {
  std::shared_ptr<DetectorSeries> series;
  DetectorGraph graph;
  DataSplits data;
  ModelConfig model;
};

Fixture fixture(double dropout = 0.0) {
  SynthOptions so;
  so.nodes = 3;
  so.steps = 160;
  SyntheticDataset d = synthesize_dataset(so);
  Fixture f;
  f.series = std::make_shared<DetectorSeries>(d.series);
  f.graph = DetectorGraph::from_adjacency(d.adjacency);
  WindowOptions wo;
  wo.input_len = 3;
  wo.output_len = 3;
  f.data = make_windows(f.series, wo);
  f.model.nodes = 3;
  f.model.input_len = 3;
  f.model.output_len = 3;
  f.model.hidden = 4;
  f.model.layers = 1;
  f.model.embed_dim = 2;
  f.model.predictor_hidden = 8;
  f.model.dropout = dropout;
  return f;
}

TrainRunConfig run(std::size_t epochs, double lr = 5e-3) {
  TrainRunConfig r;
  r.batch_size = 16;
  r.lr = lr;
  r.max_epochs = epochs;
  r.seed = 3;
  return r;
}

TEST(Schedule, StepDecayEveryHundredEpochs) {
  TrainRunConfig r;
  EXPECT_EQ(learning_rate_at(r, 0), 1e-3);
  EXPECT_EQ(learning_rate_at(r, 99), 1e-3);
  EXPECT_EQ(learning_rate_at(r, 100), 5e-4);
  EXPECT_EQ(learning_rate_at(r, 250), 2.5e-4);
}

TEST(RunConfig, Validation) {
  TrainRunConfig r;
  EXPECT_NO_THROW(r.validate());
  r.batch_size = 0;
  EXPECT_THROW(r.validate(), ConfigError);
  r = {};
  r.lr = -1;
  EXPECT_THROW(r.validate(), ConfigError);
  r = {};
  r.patience = 0;
  EXPECT_THROW(r.validate(), ConfigError);
  EXPECT_EQ(TrainRunConfig{}.to_json()["batch_size"], 64);
}

TEST(Train, SameSeedSameTrace) {
  Fixture f = fixture(0.2);
  TrainResult a = train(f.model, f.graph, f.data, run(3));
  TrainResult b = train(f.model, f.graph, f.data, run(3));
  ASSERT_EQ(a.trace.size(), 3u);
  for (std::size_t e = 0; e < 3; ++e) {
    EXPECT_EQ(a.trace[e].train_loss, b.trace[e].train_loss);
    EXPECT_EQ(a.trace[e].val_mae, b.trace[e].val_mae);
  }
  EXPECT_EQ(encode_checkpoint(a.best), encode_checkpoint(b.best));
  TrainRunConfig other = run(3);
  other.seed = 4;
  EXPECT_NE(train(f.model, f.graph, f.data, other).trace[0].train_loss, a.trace[0].train_loss);
}

double eval_train_loss(const DetectorNet& model, const WindowSet& windows) {
  NoGradGuard guard;
  SampleBatch all = windows.all();
  return masked_mae_loss(model.forward(all.inputs, Mode::eval), all.normalized_targets(), all.mask).value.item();
}

TEST(Train, OneEpochLowersTrainingLoss) {
  Fixture f = fixture();
  DetectorNet fresh(f.model, f.graph);
  const double before = eval_train_loss(fresh, f.data.train);
  TrainResult r = train(f.model, f.graph, f.data, run(1, 1e-2));
  DetectorNet trained(f.model, f.graph);
  restore_parameters(trained, r.best);
  EXPECT_LT(eval_train_loss(trained, f.data.train), before);
}

TEST(Train, ZeroLearningRateKeepsLossConstant) {
  Fixture f = fixture();
  TrainRunConfig r = run(4, 0.0);
  r.weight_decay = 0.0;
  TrainResult res = train(f.model, f.graph, f.data, r);
  ASSERT_EQ(res.trace.size(), 4u);
  for (const auto& e : res.trace) {
    EXPECT_NEAR(e.train_loss, res.trace[0].train_loss, 1e-12);
    EXPECT_EQ(e.val_mae, res.trace[0].val_mae);
  }
  EXPECT_EQ(res.best_epoch, 0u);
}

TEST(Train, BestCheckpointTracksLowestValidation) {
  Fixture f = fixture();
  TrainResult r = train(f.model, f.graph, f.data, run(6, 2e-2));
  ASSERT_EQ(r.trace.size(), 6u);
  double lowest = std::numeric_limits<double>::infinity();
  std::size_t arg = 0;
  for (const auto& e : r.trace)
    if (*e.val_mae < lowest) lowest = *e.val_mae, arg = e.epoch;
  EXPECT_EQ(r.best_score, lowest);
  EXPECT_EQ(r.best_epoch, arg);
  EXPECT_LE(r.best_score, *r.trace.back().val_mae);
  EXPECT_EQ(r.best.metadata["best_epoch"], arg);
  EXPECT_EQ(r.best.metadata["epochs_run"], 6);

  DetectorNet restored(f.model, f.graph);
  restore_parameters(restored, r.best);
  Evaluation ev = evaluate_model(restored, f.data.val, {});
  EXPECT_NEAR(*ev.report.aggregate.mae, r.best_score, 1e-12);
}

TEST(Train, PatienceStopsEarly) {
  Fixture f = fixture();
  TrainRunConfig r = run(50, 0.0);
  r.patience = 2;
  TrainResult res = train(f.model, f.graph, f.data, r);
  EXPECT_TRUE(res.early_stopped);
  EXPECT_EQ(res.trace.size(), 3u);
  EXPECT_EQ(res.best_epoch, 0u);
}

TEST(Train, NonFiniteDataNamesEpochAndBatch) {
  Fixture f = fixture();
  auto broken = std::make_shared<DetectorSeries>(*f.series);
  broken->values[4] = std::numeric_limits<double>::quiet_NaN();
  WindowOptions wo;
  wo.input_len = wo.output_len = 3;
  DataSplits d = make_windows(broken, wo, Normalization{60, 10});
  try {
    train(f.model, f.graph, d, run(1));
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_THAT(e.what(), HasSubstr("epoch 0, batch"));
  }
}

TEST(Train, CallbackSeesEveryEpochAndCsvHasHeader) {
  Fixture f = fixture();
  std::vector<std::size_t> seen;
  TrainResult r = train(f.model, f.graph, f.data, run(2), [&](const EpochRecord& e) { seen.push_back(e.epoch); });
  EXPECT_EQ(seen, (std::vector<std::size_t>{0, 1}));
  const std::string csv = r.loss_trace_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,lr,train_loss,val_mae");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(Predict, ShapeUnitsAndBatchingInvariance) {
  Fixture f = fixture();
  DetectorNet model(f.model, f.graph);
  Tensor a = predict(model, f.data.test, 5);
  Tensor b = predict(model, f.data.test, 64);
  EXPECT_EQ(a.shape(), (Shape{f.data.test.size(), 3, 3, 1}));
  EXPECT_EQ(a.to_vector(), b.to_vector());
  NoGradGuard guard;
  Tensor z = model.forward(f.data.test.batch(0, 1).inputs, Mode::eval);
  EXPECT_DOUBLE_EQ(a.values()[0], f.data.norm.invert(z.values()[0]));
}

TEST(Evaluate, HistoricalAverageMatchesManualMae) {
  Fixture f = fixture();
  Evaluation ev = evaluate_historical_average(f.data.test, {1, 3});
  SampleBatch all = f.data.test.all();
  double total = 0;
  std::size_t count = 0;
  for (std::size_t s = 0; s < all.size(); ++s)
    for (std::size_t i = 0; i < 3; ++i) {
      double avg = 0;
      for (std::size_t t = 0; t < 3; ++t) avg += all.raw_inputs.values()[(s * 3 + i) * 3 + t];
      avg /= 3;
      for (std::size_t h = 0; h < 3; ++h) {
        const std::size_t idx = (s * 3 + i) * 3 + h;
        if (all.mask.values()[idx] == 0.0) continue;
        total += std::fabs(avg - all.targets.values()[idx]);
        ++count;
      }
    }
  EXPECT_NEAR(*ev.report.aggregate.mae, total / count, 1e-10);
  EXPECT_EQ(ev.report.horizons.size(), 2u);
}

}  // namespace
}  // namespace dnet
