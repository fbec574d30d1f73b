#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "detectornet/tensor.hpp"

namespace dnet {

class Rng;

/// Named trainable tensors in insertion order.
class ParamStore {
 public:
  using Entry = std::pair<std::string, Tensor>;

  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

  /// Registers `value` under `name` and marks it as requiring a gradient.
  /// Throws ValidationError on a duplicate name.
  Tensor add(std::string name, Tensor value);

  bool contains(std::string_view name) const;
  Tensor get(std::string_view name) const;

  std::size_t size() const { return entries_.size(); }
  /// Total number of scalar weights.
  std::size_t scalar_count() const;

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  const std::vector<Entry>& entries() const { return entries_; }

  /// Releases every gradient buffer (`has_grad()` becomes false).
  void zero_grad();
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Glorot/Xavier uniform: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);
/// Independent N(0, 1) * scale draws.
Tensor scaled_normal(Shape shape, double scale, Rng& rng);

}  // namespace dnet
