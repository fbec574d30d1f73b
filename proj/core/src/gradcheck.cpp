#include "detectornet/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "detectornet/error.hpp"
#include "detectornet/random.hpp"

namespace dnet {

std::vector<std::string> GradCheckReport::failures(double threshold) const {
  std::vector<std::string> out;
  for (const auto& p : params) {
    if (!(p.max_rel_error <= threshold)) out.push_back(p.name);
  }
  return out;
}

std::string GradCheckReport::to_text() const {
  std::ostringstream out;
  std::size_t width = 9;
  for (const auto& p : params) width = std::max(width, p.name.size());
  out.precision(3);
  out << std::scientific;
  for (const auto& p : params) {
    out << p.name << std::string(width - p.name.size() + 2, ' ') << p.max_rel_error << "  (" << p.coords_checked
        << " coords";
    if (p.kink_coords > 0) out << ", " << p.kink_coords << " near a kink";
    out << ")\n";
  }
  out << "max" << std::string(width - 1, ' ') << max_rel_error << '\n';
  return out.str();
}

GradCheckReport check_gradients(const std::function<Tensor()>& loss_fn, ParamStore& store,
                                const GradCheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  store.zero_grad();
  loss_fn().backward();

  Rng rng(options.seed);
  GradCheckReport report;
  for (const auto& [name, param] : store) {
    Tensor p = param;
    if (!p.has_grad()) throw StateError("parameter '" + name + "' received no gradient");
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());

    std::vector<std::size_t> coords(p.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > options.coords_per_param) {
      rng.shuffle(coords);
      coords.resize(options.coords_per_param);
      std::sort(coords.begin(), coords.end());
    }

    ParamGradError entry{name, 0.0, coords.size()};
    NoGradGuard no_grad;
    for (std::size_t idx : coords) {
      auto values = p.mutable_values();
      const double original = values[idx];
      auto central = [&](double h) {
        values[idx] = original + h;
        const double up = loss_fn().item();
        values[idx] = original - h;
        const double down = loss_fn().item();
        values[idx] = original;
        return (up - down) / (2.0 * h);
      };
      double numeric = central(options.step);
      const double half = central(options.step / 2.0);
      // Smooth losses agree to O(h^2) here; a large gap means the stencil
      // straddles a ReLU/abs kink, so measure again with a narrower one.
      if (std::fabs(numeric - half) > options.kink_tolerance * std::max(std::fabs(numeric), 1e-3)) {
        numeric = central(options.step / 16.0);
        ++entry.kink_coords;
      }
      const double denom = std::max({std::fabs(analytic[idx]), std::fabs(numeric), options.denominator_floor});
      entry.max_rel_error = std::max(entry.max_rel_error, std::fabs(analytic[idx] - numeric) / denom);
    }
    report.kink_coords += entry.kink_coords;
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.params.push_back(std::move(entry));
  }
  store.zero_grad();
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

ModelConfig tiny_gradcheck_config() {
  ModelConfig c;
  c.nodes = 3;
  c.input_len = 3;
  c.output_len = 3;
  c.input_dim = 2;
  c.hidden = 4;
  c.layers = 1;
  c.diffusion_steps = 2;
  c.embed_dim = 3;
  c.predictor_hidden = 5;
  c.learnable_fusion = true;
  return c;
}

GradCheckReport gradient_check_model(ModelConfig config, std::uint64_t seed, const GradCheckOptions& options) {
  config.seed = seed;
  config.validate();
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const std::size_t n = config.nodes;
  Tensor adjacency(Shape{n, n});
  for (auto& v : adjacency.mutable_values()) v = rng.uniform() < 0.6 ? rng.uniform(0.1, 1.0) : 0.0;
  DetectorNet model(config, DetectorGraph::from_adjacency(adjacency));
  // Zero biases put ReLUs exactly on their kink when a hidden row is all dead.
  for (auto [name, param] : model.params().entries()) {
    for (auto& v : param.mutable_values()) v += rng.uniform(-0.1, 0.1);
  }

  const std::size_t batch = 2;
  Tensor inputs(Shape{batch, n, config.input_len, config.input_dim});
  for (auto& v : inputs.mutable_values()) v = rng.normal();
  // Targets sit at least 0.5 away from the initial predictions, off the |.| kink.
  Tensor targets(Shape{batch, n, config.output_len, config.output_dim});
  {
    NoGradGuard guard;
    const Tensor pred = model.forward(inputs, Mode::eval);
    auto t = targets.mutable_values();
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double gap = rng.uniform(0.5, 2.5);
      t[i] = pred.values()[i] + (rng.uniform() < 0.5 ? -gap : gap);
    }
  }
  Tensor mask(targets.shape(), 1.0);

  auto loss_fn = [&]() { return masked_mae_loss(model.forward(inputs, Mode::eval), targets, mask).value; };
  GradCheckOptions opts = options;
  opts.seed = seed;
  return check_gradients(loss_fn, model.params(), opts);
}

}  // namespace dnet
