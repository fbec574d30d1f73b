#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dnet {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor;

/// Handed to a backward rule. Gives read access to the incoming gradient and
/// the forward values, and write access to the gradient buffers of the inputs
/// that require one.
class BackwardContext {
 public:
  BackwardContext(detail::Node& self) : self_(self) {}

  std::span<const double> out_grad() const;
  std::span<const double> out_value() const;
  std::size_t input_count() const;
  const Shape& input_shape(std::size_t i) const;
  std::span<const double> input_value(std::size_t i) const;
  bool needs_grad(std::size_t i) const;
  /// Gradient accumulator of input i (allocated and zero-filled on first use).
  std::span<double> input_grad(std::size_t i) const;

 private:
  detail::Node& self_;
};

using BackwardRule = std::function<void(const BackwardContext&)>;

/// Dense row-major array of doubles with optional reverse-mode gradient
/// tracking.
///
/// Tensor is a shared handle: copies alias the same storage, like a
/// reference-counted array in most autograd frameworks. Results of operations
/// remember their inputs and backward rule while gradient recording is
/// enabled and at least one input requires a gradient.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);

  /// Records an operation result on the tape. This is the extension point
  /// every built-in op uses; the backward rule is only stored when some input
  /// requires a gradient and recording is enabled.
  static Tensor from_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                        BackwardRule backward, std::string_view op_name);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  /// Length of an axis; negative axes count from the end.
  std::size_t dim(int axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  /// Direct write access. Only allowed on leaves (parameters, inputs).
  std::span<double> mutable_values();
  double item() const;
  std::vector<double> to_vector() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  /// Drops the gradient buffer; `has_grad()` is false afterwards.
  void clear_grad();

  /// Reverse-mode sweep from this scalar. Populates `grad()` of every
  /// reachable leaf that requires a gradient (accumulating), then releases the
  /// recorded graph. A second call on the same graph is a StateError.
  void backward() const;

  /// Same values, no history, does not require grad.
  Tensor detach() const;
  /// Deep copy of the values; keeps requires_grad, drops history.
  Tensor clone() const;

  std::string_view op_name() const;
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const detail::Node& node() const;
  detail::Node& node();

  std::shared_ptr<detail::Node> node_;

  friend class BackwardContext;
};

/// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_recording_enabled();

}  // namespace dnet
