#include "detectornet/param_store.hpp"

#include <cmath>

#include "detectornet/error.hpp"
#include "detectornet/random.hpp"

namespace dnet {

Tensor ParamStore::add(std::string name, Tensor value) {
  if (index_.count(name)) throw ValidationError("duplicate parameter name '" + name + "'");
  value.set_requires_grad(true);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), value);
  return value;
}

bool ParamStore::contains(std::string_view name) const { return index_.count(std::string(name)) > 0; }

Tensor ParamStore::get(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ValidationError("unknown parameter '" + std::string(name) + "'");
  return entries_[it->second].second;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t total = 0;
  for (const auto& [name, t] : entries_) total += t.numel();
  return total;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : entries_) {
    Tensor handle = t;
    handle.clear_grad();
  }
}

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(Shape{fan_in, fan_out});
  for (auto& v : t.mutable_values()) v = rng.uniform(-bound, bound);
  return t;
}

Tensor scaled_normal(Shape shape, double scale, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.mutable_values()) v = scale * rng.normal();
  return t;
}

}  // namespace dnet
