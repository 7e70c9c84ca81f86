#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "stenet/rng.hpp"

namespace stenet {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::string_view op = "leaf";
  std::vector<NodePtr> inputs;
  // Reads this node's grad and accumulates into inputs' grads.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return inputs.empty(); }

  std::vector<double>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

inline std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables tape recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

/// Dense row-major f64 tensor handle. Copies share the underlying node, so a
/// copied parameter sees optimizer updates made through the original.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false) {
    if (stenet::numel(shape) != data.size()) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + to_string(shape));
    }
    node_ = std::make_shared<detail::Node>();
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
    node_->id = detail::next_node_id();
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = stenet::numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const auto n = stenet::numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }
  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({}, {value}, requires_grad);
  }
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false) {
    const auto n = stenet::numel(shape);
    return Tensor(std::move(shape), uniform_vector(rng, n, lo, hi), requires_grad);
  }
  /// Xavier-uniform with bound sqrt(6 / (fan_in + fan_out)).
  static Tensor xavier(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return uniform(std::move(shape), rng, -bound, bound, true);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node().shape; }
  std::size_t dim() const { return shape().size(); }
  std::size_t size(std::size_t axis) const {
    if (axis >= dim()) throw ShapeError("axis out of range for shape " + to_string(shape()));
    return shape()[axis];
  }
  std::size_t numel() const { return node().data.size(); }
  std::span<const double> data() const { return node().data; }
  double operator[](std::size_t i) const { return node().data[i]; }
  double item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return node().data[0];
  }
  std::vector<double> to_vector() const { return node().data; }

  /// Direct write access. Only legal on leaves: rewriting a recorded
  /// intermediate would silently invalidate its backward rule.
  std::span<double> mutable_data() {
    if (!node().is_leaf()) throw std::logic_error("mutable_data() on a non-leaf tensor");
    return node_->data;
  }

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool on) {
    if (!node().is_leaf()) throw std::logic_error("requires_grad can only change on leaves");
    node_->requires_grad = on;
  }
  bool has_grad() const { return node().grad.size() == node().data.size() && !node().grad.empty(); }
  std::span<const double> grad() const { return node().grad; }
  void zero_grad() { node_->grad.clear(); }

  std::uint64_t id() const { return node().id; }
  std::string_view op() const { return node().op; }
  bool is_leaf() const { return node().is_leaf(); }

  bool all_finite() const {
    return std::all_of(node().data.begin(), node().data.end(),
                       [](double v) { return std::isfinite(v); });
  }

  /// Fresh leaf holding a copy of the values, detached from any graph.
  Tensor detach(bool requires_grad = false) const {
    return Tensor(shape(), node().data, requires_grad);
  }

  const detail::NodePtr& node_ptr() const { return node_; }

  static Tensor from_node(detail::NodePtr n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  const detail::Node& node() const {
    if (!node_) throw std::logic_error("use of undefined tensor");
    return *node_;
  }

  detail::NodePtr node_;
};

namespace detail {

/// Creates an op result. The node is attached to the graph only when grad
/// mode is on and at least one input requires grad.
inline Tensor make_result(Shape shape, std::vector<double> data, std::string_view op,
                          std::vector<Tensor> inputs, std::function<void(Node&)> backward) {
  Tensor out(std::move(shape), std::move(data));
  bool track = false;
  if (grad_mode()) {
    for (const auto& in : inputs) track = track || in.requires_grad();
  }
  auto& node = *out.node_ptr();
  node.op = op;
  if (track) {
    node.requires_grad = true;
    node.inputs.reserve(inputs.size());
    for (auto& in : inputs) node.inputs.push_back(in.node_ptr());
    node.backward = std::move(backward);
  }
  return out;
}

inline bool wants_grad(const Node& n, std::size_t input) {
  return n.inputs[input]->requires_grad;
}

}  // namespace detail

/// One recorded operation in topological order.
struct TapeEntry {
  std::uint64_t output_id;
  std::vector<std::uint64_t> input_ids;
  std::string_view op;
  detail::Node* node;
};

/// Topologically ordered record of every operation reachable from a root.
/// Replaying it in reverse propagates gradients from the root to the leaves.
class Tape {
 public:
  static Tape record_from(const Tensor& root) {
    Tape tape;
    if (!root.defined() || !root.requires_grad()) return tape;
    std::unordered_set<const detail::Node*> seen;
    // Iterative post-order DFS; each frame is (node, next input to visit).
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root.node_ptr().get(), 0);
    seen.insert(root.node_ptr().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        detail::Node* child = node->inputs[next++].get();
        if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        continue;
      }
      TapeEntry e{node->id, {}, node->op, node};
      for (const auto& in : node->inputs) e.input_ids.push_back(in->id);
      tape.entries_.push_back(std::move(e));
      stack.pop_back();
    }
    return tape;
  }

  const std::vector<TapeEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool contains(std::uint64_t id) const {
    return std::any_of(entries_.begin(), entries_.end(),
                       [id](const TapeEntry& e) { return e.output_id == id; });
  }

  /// Seeds the last entry (the root) with d(root)/d(root) = 1 and runs every
  /// backward rule in reverse order. Intermediate grads are reset first so
  /// repeated calls do not double count; leaf grads accumulate.
  void replay_backward() {
    if (entries_.empty()) return;
    for (auto& e : entries_) {
      if (!e.node->is_leaf()) e.node->grad.assign(e.node->data.size(), 0.0);
    }
    auto& root = *entries_.back().node;
    if (root.is_leaf()) {
      root.ensure_grad()[0] += 1.0;
      return;
    }
    root.grad[0] = 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      detail::Node& n = *it->node;
      if (n.is_leaf() || !n.backward) continue;
      for (auto& in : n.inputs) {
        if (in->requires_grad) in->ensure_grad();
      }
      n.backward(n);
    }
  }

 private:
  std::vector<TapeEntry> entries_;
};

/// Populates grad on every requires_grad leaf reachable from a scalar loss.
inline void backward(const Tensor& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward on undefined tensor");
  if (loss.numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) throw std::invalid_argument("backward: loss is not on the tape");
  Tape::record_from(loss).replay_backward();
}

}  // namespace stenet
