#include "detectornet/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "detectornet/error.hpp"

namespace dnet {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardRule backward;
  std::string op = "leaf";

  bool is_leaf() const { return !backward && op == "leaf"; }

  std::span<double> ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

namespace {

thread_local bool g_recording = true;

}  // namespace

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

// BackwardContext -----------------------------------------------------------

std::span<const double> BackwardContext::out_grad() const { return self_.grad; }
std::span<const double> BackwardContext::out_value() const { return self_.data; }
std::size_t BackwardContext::input_count() const { return self_.inputs.size(); }
const Shape& BackwardContext::input_shape(std::size_t i) const { return self_.inputs.at(i)->shape; }
std::span<const double> BackwardContext::input_value(std::size_t i) const {
  return self_.inputs.at(i)->data;
}
bool BackwardContext::needs_grad(std::size_t i) const { return self_.inputs.at(i)->requires_grad; }
std::span<double> BackwardContext::input_grad(std::size_t i) const {
  auto& in = *self_.inputs.at(i);
  if (!in.requires_grad) return {};
  return in.ensure_grad();
}

// Tensor --------------------------------------------------------------------

Tensor::Tensor(Shape shape, double fill) : node_(std::make_shared<detail::Node>()) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor axes must be positive, got " + shape_to_string(shape));
  }
  node_->data.assign(numel_of(shape), fill);
  node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : node_(std::make_shared<detail::Node>()) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor axes must be positive, got " + shape_to_string(shape));
  }
  if (numel_of(shape) != values.size()) {
    throw DimensionError("shape " + shape_to_string(shape) + " needs " +
                         std::to_string(numel_of(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::from_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                       BackwardRule backward, std::string_view op_name) {
  Tensor out(std::move(shape), std::move(values));
  bool track = false;
  if (g_recording) {
    for (const auto& in : inputs) {
      if (in.defined() && in.requires_grad()) {
        if (in.node_->consumed) {
          throw StateError("op '" + std::string(op_name) +
                           "' consumes a tensor whose graph was already released by backward()");
        }
        track = true;
      }
    }
  }
  if (track) {
    auto& n = *out.node_;
    n.requires_grad = true;
    n.op = std::string(op_name);
    n.backward = std::move(backward);
    n.inputs.reserve(inputs.size());
    for (auto& in : inputs) n.inputs.push_back(in.node_);
  }
  return out;
}

const detail::Node& Tensor::node() const {
  if (!node_) throw StateError("use of an undefined tensor");
  return *node_;
}

detail::Node& Tensor::node() {
  if (!node_) throw StateError("use of an undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return node().shape; }

std::size_t Tensor::dim(int axis) const {
  const auto r = static_cast<int>(rank());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_to_string(shape()));
  }
  return shape()[static_cast<std::size_t>(a)];
}

std::size_t Tensor::numel() const { return node().data.size(); }

std::span<const double> Tensor::values() const { return node().data; }

std::span<double> Tensor::mutable_values() {
  if (!node().is_leaf()) throw StateError("cannot write into the result of op '" + node().op + "'");
  return node().data;
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() needs a single element, shape " + shape_to_string(shape()));
  return node().data[0];
}

std::vector<double> Tensor::to_vector() const { return node().data; }

bool Tensor::requires_grad() const { return node().requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!node().is_leaf()) throw StateError("requires_grad can only be set on leaf tensors");
  node().requires_grad = flag;
  return *this;
}

bool Tensor::is_leaf() const { return node().is_leaf(); }
bool Tensor::has_grad() const { return !node().grad.empty(); }
std::span<const double> Tensor::grad() const { return node().grad; }
std::span<double> Tensor::mutable_grad() { return node().ensure_grad(); }
void Tensor::clear_grad() {
  node().grad.clear();
  node().grad.shrink_to_fit();
}

void Tensor::backward() const {
  const auto& root = node();
  if (root.data.size() != 1) {
    throw DimensionError("backward() needs a scalar loss, got shape " + shape_to_string(root.shape));
  }
  if (root.consumed) throw StateError("backward() called twice on the same graph; run a new forward pass");
  if (!root.requires_grad) throw StateError("backward() on a tensor that does not depend on any parameter");

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  auto* start = node_.get();
  stack.emplace_back(start, 0);
  visited.insert(start);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      auto* child = n->inputs[next++].get();
      if (child->requires_grad && child->backward && !visited.count(child)) {
        if (child->consumed) throw StateError("backward() reached a released graph node");
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  // The root may be a leaf (e.g. a parameter used directly as loss).
  start->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (!n->backward) continue;
    if (n->grad.empty()) continue;
    BackwardContext ctx(*n);
    n->backward(ctx);
  }

  for (auto* n : order) {
    if (!n->backward) continue;
    n->consumed = true;
    n->backward = nullptr;
    n->inputs.clear();
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

Tensor Tensor::detach() const { return Tensor(shape(), node().data); }

Tensor Tensor::clone() const {
  Tensor out(shape(), node().data);
  out.node_->requires_grad = node().requires_grad;
  return out;
}

std::string_view Tensor::op_name() const { return node().op; }

NoGradGuard::NoGradGuard() : previous_(g_recording) { g_recording = false; }
NoGradGuard::~NoGradGuard() { g_recording = previous_; }

bool grad_recording_enabled() { return g_recording; }

}  // namespace dnet
