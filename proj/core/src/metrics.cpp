#include "detectornet/metrics.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "detectornet/error.hpp"

namespace dnet {

SliceMetrics masked_metrics(std::span<const double> pred, std::span<const double> truth,
                            std::span<const double> mask) {
  if (pred.size() != truth.size() || pred.size() != mask.size()) {
    throw DimensionError("metric operands differ in length");
  }
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  double pct_sum = 0.0;
  std::size_t count = 0;
  std::size_t pct_count = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (mask[i] == 0.0) continue;
    const double diff = pred[i] - truth[i];
    abs_sum += std::fabs(diff);
    sq_sum += diff * diff;
    ++count;
    if (truth[i] != 0.0) {
      pct_sum += std::fabs(diff / truth[i]);
      ++pct_count;
    }
  }
  SliceMetrics m;
  m.count = count;
  if (count > 0) {
    m.mae = abs_sum / static_cast<double>(count);
    m.rmse = std::sqrt(sq_sum / static_cast<double>(count));
  }
  if (pct_count > 0) m.mape = 100.0 * pct_sum / static_cast<double>(pct_count);
  return m;
}

MetricsReport evaluate_metrics(const Tensor& pred, const Tensor& truth, const Tensor& mask,
                               const std::vector<std::size_t>& horizons) {
  if (pred.shape() != truth.shape() || pred.shape() != mask.shape()) {
    throw DimensionError("metrics need equal shapes: pred " + shape_to_string(pred.shape()) + ", truth " +
                         shape_to_string(truth.shape()) + ", mask " + shape_to_string(mask.shape()));
  }
  MetricsReport report;
  report.aggregate = masked_metrics(pred.values(), truth.values(), mask.values());
  if (pred.rank() < 2) return report;

  const std::size_t q = pred.dim(-2);
  const std::size_t c = pred.dim(-1);
  const std::size_t outer = pred.numel() / (q * c);
  std::vector<std::size_t> wanted = horizons;
  if (wanted.empty()) {
    for (std::size_t h = 1; h <= q; ++h) wanted.push_back(h);
  }
  const auto pv = pred.values();
  const auto tv = truth.values();
  const auto mv = mask.values();
  for (std::size_t h : wanted) {
    if (h == 0 || h > q) {
      throw DimensionError("horizon " + std::to_string(h) + " outside 1.." + std::to_string(q));
    }
    std::vector<double> p, t, m;
    p.reserve(outer * c);
    t.reserve(outer * c);
    m.reserve(outer * c);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t idx = (o * q + (h - 1)) * c + ch;
        p.push_back(pv[idx]);
        t.push_back(tv[idx]);
        m.push_back(mv[idx]);
      }
    }
    report.horizons.push_back(HorizonMetrics{h, masked_metrics(p, t, m)});
  }
  return report;
}

namespace {

nlohmann::json slice_json(const SliceMetrics& m) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return nlohmann::json{{"mae", opt(m.mae)}, {"rmse", opt(m.rmse)}, {"mape", opt(m.mape)}, {"count", m.count}};
}

}  // namespace

std::string MetricsReport::to_json_lines(const std::string& label) const {
  std::string out;
  auto emit = [&](nlohmann::json j) {
    if (!label.empty()) j["model"] = label;
    out += j.dump();
    out += '\n';
  };
  for (const auto& h : horizons) {
    auto j = slice_json(h.metrics);
    j["horizon"] = h.horizon;
    emit(std::move(j));
  }
  auto j = slice_json(aggregate);
  j["horizon"] = "all";
  j["seconds"] = seconds;
  emit(std::move(j));
  return out;
}

}  // namespace dnet
