#include "detectornet/training.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "detectornet/adam.hpp"
#include "detectornet/error.hpp"
#include "detectornet/random.hpp"

namespace dnet {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string format_number(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace

void TrainRunConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(lr >= 0.0)) throw ConfigError("lr must be non-negative");
  if (!(lr_decay > 0.0)) throw ConfigError("lr_decay must be positive");
  if (lr_decay_every == 0) throw ConfigError("lr_decay_every must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (max_epochs == 0) throw ConfigError("epochs must be positive");
  if (patience == 0) throw ConfigError("patience must be at least 1");
}

nlohmann::json TrainRunConfig::to_json() const {
  return nlohmann::json{{"batch_size", batch_size},       {"lr", lr},
                        {"lr_decay", lr_decay},           {"lr_decay_every", lr_decay_every},
                        {"weight_decay", weight_decay},   {"max_epochs", max_epochs},
                        {"patience", patience},           {"max_train_windows", max_train_windows},
                        {"seed", seed}};
}

double learning_rate_at(const TrainRunConfig& config, std::size_t epoch) {
  const auto drops = static_cast<double>(epoch / config.lr_decay_every);
  return config.lr * std::pow(config.lr_decay, drops);
}

std::string TrainResult::loss_trace_csv() const {
  std::string out = "epoch,lr,train_loss,val_mae\n";
  for (const auto& r : trace) {
    out += std::to_string(r.epoch) + ',' + format_number(r.lr) + ',' + format_number(r.train_loss) + ',' +
           (r.val_mae ? format_number(*r.val_mae) : std::string()) + '\n';
  }
  return out;
}

Tensor predict(const DetectorNet& model, const WindowSet& windows, std::size_t batch_size) {
  if (windows.empty()) throw DataError("no windows to predict");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  NoGradGuard no_grad;
  const auto& cfg = model.config();
  const std::size_t per_window = cfg.nodes * cfg.output_len * cfg.output_dim;
  std::vector<double> out;
  out.reserve(windows.size() * per_window);
  const Normalization& norm = windows.normalization();
  for (std::size_t begin = 0; begin < windows.size(); begin += batch_size) {
    const std::size_t count = std::min(batch_size, windows.size() - begin);
    const SampleBatch batch = windows.batch(begin, count);
    const Tensor pred = model.forward(batch.inputs, Mode::eval);
    for (double v : pred.values()) out.push_back(norm.invert(v));
  }
  return Tensor(Shape{windows.size(), cfg.nodes, cfg.output_len, cfg.output_dim}, std::move(out));
}

namespace {

/// Truth and mask of every window, in the model's output layout.
std::pair<Tensor, Tensor> gather_truth(const WindowSet& windows, std::size_t output_dim) {
  const SampleBatch all = windows.all();
  if (output_dim != 1) throw ConfigError("evaluation supports a single output channel");
  return {all.targets, all.mask};
}

}  // namespace

Evaluation evaluate_model(const DetectorNet& model, const WindowSet& windows,
                          const std::vector<std::size_t>& horizons, std::size_t batch_size) {
  const auto start = Clock::now();
  Evaluation ev;
  ev.predictions = predict(model, windows, batch_size);
  std::tie(ev.truth, ev.mask) = gather_truth(windows, model.config().output_dim);
  ev.report = evaluate_metrics(ev.predictions, ev.truth, ev.mask, horizons);
  ev.report.seconds = seconds_since(start);
  return ev;
}

Evaluation evaluate_historical_average(const WindowSet& windows, const std::vector<std::size_t>& horizons) {
  const auto start = Clock::now();
  if (windows.empty()) throw DataError("no windows to evaluate");
  const SampleBatch all = windows.all();
  Evaluation ev;
  ev.predictions = historical_average(all, windows.options().output_len);
  ev.truth = all.targets;
  ev.mask = all.mask;
  ev.report = evaluate_metrics(ev.predictions, ev.truth, ev.mask, horizons);
  ev.report.seconds = seconds_since(start);
  return ev;
}

TrainResult train(const ModelConfig& model_config, const DetectorGraph& graph, const DataSplits& data,
                  const TrainRunConfig& run, const EpochCallback& on_epoch) {
  run.validate();
  DetectorNet model(model_config, graph);
  const WindowSet train_set = run.max_train_windows > 0 ? data.train.head(run.max_train_windows) : data.train;
  if (train_set.empty()) throw DataError("no training windows");

  AdamState adam(AdamOptions{run.lr, 0.9, 0.999, 1e-8, run.weight_decay});
  Rng rng(run.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result;
  std::optional<double> best;
  std::size_t stale = 0;
  for (std::size_t epoch = 0; epoch < run.max_epochs; ++epoch) {
    const auto start = Clock::now();
    EpochRecord record;
    record.epoch = epoch;
    record.lr = learning_rate_at(run, epoch);
    adam.options().lr = record.lr;
    rng.shuffle(order);

    double weighted_loss = 0.0;
    std::size_t weight = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += run.batch_size) {
      const std::size_t end = std::min(order.size(), begin + run.batch_size);
      const std::vector<std::size_t> positions(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                               order.begin() + static_cast<std::ptrdiff_t>(end));
      const SampleBatch batch = train_set.gather(positions);
      const std::string where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(begin / run.batch_size);
      MaskedLoss loss;
      double value = 0.0;
      try {
        const Tensor pred = model.forward(batch.inputs, Mode::train, &rng);
        loss = masked_mae_loss(pred, batch.normalized_targets(), batch.mask);
        if (loss.empty_mask) continue;
        value = loss.value.item();
        if (!std::isfinite(value)) throw NumericError("loss is " + std::to_string(value));
        model.params().zero_grad();
        loss.value.backward();
        adam_step(model.params(), adam);
      } catch (const NumericError& e) {
        e.rethrow_with_context("training diverged at " + where);
      }
      weighted_loss += value * static_cast<double>(loss.count);
      weight += loss.count;
    }
    record.train_loss = weight > 0 ? weighted_loss / static_cast<double>(weight) : 0.0;
    if (!data.val.empty()) {
      record.val_mae = evaluate_model(model, data.val, {}, run.batch_size).report.aggregate.mae;
    }
    record.seconds = seconds_since(start);
    result.trace.push_back(record);

    const double score = record.val_mae.value_or(record.train_loss);
    if (!best || score < *best) {
      best = score;
      stale = 0;
      result.best = Checkpoint::capture(model, data.norm);
      result.best_epoch = epoch;
      result.best_score = score;
    } else if (++stale >= run.patience) {
      result.early_stopped = true;
    }
    if (on_epoch) on_epoch(record);
    if (result.early_stopped) break;
  }
  result.best.metadata = nlohmann::json{{"best_epoch", result.best_epoch},
                                        {"best_score", result.best_score},
                                        {"epochs_run", result.trace.size()},
                                        {"train", run.to_json()}};
  return result;
}

}  // namespace dnet
