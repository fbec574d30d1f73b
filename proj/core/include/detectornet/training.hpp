#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "detectornet/checkpoint.hpp"
#include "detectornet/data.hpp"
#include "detectornet/metrics.hpp"
#include "detectornet/model.hpp"

namespace dnet {

struct TrainRunConfig {
  std::size_t batch_size = 64;
  double lr = 1e-3;
  double lr_decay = 0.5;
  std::size_t lr_decay_every = 100;  // epochs
  double weight_decay = 1e-5;
  std::size_t max_epochs = 100;
  std::size_t patience = 20;  // epochs without val improvement
  std::size_t max_train_windows = 0;  // 0 = all
  std::uint64_t seed = 42;

  void validate() const;
  nlohmann::json to_json() const;
};

/// Step schedule: lr * decay^floor(epoch / decay_every), epochs counted from 0.
double learning_rate_at(const TrainRunConfig& config, std::size_t epoch);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;  // mean masked MAE in normalized units, train mode
  std::optional<double> val_mae;  // de-normalized, eval mode
  double seconds = 0.0;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochRecord> trace;
  std::size_t best_epoch = 0;
  double best_score = 0.0;
  bool early_stopped = false;

  /// "epoch,lr,train_loss,val_mae" rows. Wall-clock time is left out so the
  /// file is reproducible.
  std::string loss_trace_csv() const;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch Adam on masked MAE of normalized targets. Keeps the parameters
/// of the epoch with the lowest validation MAE (train loss when there is no
/// validation split). Throws NumericError when the loss stops being finite.
TrainResult train(const ModelConfig& model_config, const DetectorGraph& graph, const DataSplits& data,
                  const TrainRunConfig& run, const EpochCallback& on_epoch = {});

/// Eval-mode predictions in original units, [S, N, Q, c_p].
Tensor predict(const DetectorNet& model, const WindowSet& windows, std::size_t batch_size = 64);

struct Evaluation {
  Tensor predictions;
  Tensor truth;
  Tensor mask;
  MetricsReport report;
};

Evaluation evaluate_model(const DetectorNet& model, const WindowSet& windows,
                          const std::vector<std::size_t>& horizons, std::size_t batch_size = 64);
Evaluation evaluate_historical_average(const WindowSet& windows, const std::vector<std::size_t>& horizons);

}  // namespace dnet
