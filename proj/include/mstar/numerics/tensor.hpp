#pragma once

// Reverse-mode differentiation. A Tensor is a shared handle to a node that
// holds its value, an optional gradient, and (when recorded) the inputs and
// backward rule of the primitive that produced it. backward() linearises the
// recorded graph into a TapeGraph (topological order) and walks it in reverse.

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mstar/numerics/array.hpp"

namespace mstar {

struct TensorNode {
  std::uint64_t id = 0;
  const char* op = "leaf";
  Array value;
  Array grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> inputs;
  std::function<void(const Array& grad_out)> backward_fn;

  // Gradient buffer, zero-initialised on first use.
  Array& grad_buffer() {
    if (grad.size() != value.size() || grad.shape() != value.shape()) grad = Array(value.shape(), 0.0);
    return grad;
  }
  bool has_grad() const { return !grad.empty() || value.empty(); }
};

namespace detail {
inline std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Array value, bool requires_grad = false) : node_(std::make_shared<TensorNode>()) {
    node_->id = detail::next_node_id();
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  static Tensor parameter(Array value) { return Tensor(std::move(value), true); }
  static Tensor constant(Array value) { return Tensor(std::move(value), false); }

  bool defined() const { return node_ != nullptr; }
  explicit operator bool() const { return defined(); }

  const Array& value() const { return node_->value; }
  // Direct write access for optimisers and initialisers. Never use on a
  // tensor whose recorded graph is still awaiting backward().
  Array& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t i) const { return node_->value.dim(i); }
  std::size_t rank() const { return node_->value.rank(); }
  std::size_t size() const { return node_->value.size(); }
  double item() const { return node_->value.item(); }
  const char* op() const { return node_->op; }
  std::uint64_t id() const { return node_->id; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  // Accumulated gradient; zeros when nothing has been accumulated.
  const Array& grad() const { return node_->grad_buffer(); }
  void zero_grad() { node_->grad = Array(); }

  TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode>& shared() const { return node_; }

  // Detached copy of the value (new leaf, no history).
  Tensor detach() const { return Tensor(node_->value, false); }

 private:
  std::shared_ptr<TensorNode> node_;
};

// Records one primitive application. The backward rule receives the output
// gradient and accumulates into the inputs' grad buffers.
inline Tensor record_op(const char* name, Array value, std::vector<Tensor> inputs,
                        std::function<void(const Array&)> backward) {
  if (!value.all_finite()) throw NumericError(std::string(name) + ": produced a non-finite value");
  Tensor out(std::move(value), false);
  bool needs = false;
  if (grad_enabled())
    for (const auto& t : inputs) needs = needs || (t.defined() && t.requires_grad());
  out.node()->op = name;
  if (needs) {
    out.set_requires_grad(true);
    for (auto& t : inputs)
      if (t.defined()) out.node()->inputs.push_back(t.shared());
    out.node()->backward_fn = std::move(backward);
  }
  return out;
}

struct TapeEntry {
  std::uint64_t output = 0;
  const char* op = "";
  std::vector<std::uint64_t> inputs;
};

// Topologically ordered record of the primitive applications that produced a
// root tensor (inputs before outputs). Each node appears exactly once.
class TapeGraph {
 public:
  static TapeGraph record(const Tensor& root) {
    TapeGraph tape;
    if (!root.defined() || !root.requires_grad()) return tape;
    std::unordered_set<const TensorNode*> seen;
    std::vector<std::pair<TensorNode*, std::size_t>> stack{{root.node(), 0}};
    seen.insert(root.node());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        TensorNode* child = node->inputs[next++].get();
        if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      } else {
        tape.order_.push_back(node);
        stack.pop_back();
      }
    }
    return tape;
  }

  std::vector<TapeEntry> entries() const {
    std::vector<TapeEntry> out;
    for (const auto* n : order_) {
      TapeEntry e{n->id, n->op, {}};
      for (const auto& in : n->inputs) e.inputs.push_back(in->id);
      out.push_back(std::move(e));
    }
    return out;
  }
  std::size_t size() const { return order_.size(); }

  // Seeds the root gradient with ones and propagates in reverse order.
  void run_backward() const {
    if (order_.empty()) return;
    TensorNode* root = order_.back();
    auto& seed = root->grad_buffer();
    for (auto& v : seed.storage()) v += 1.0;
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      TensorNode* n = *it;
      if (!n->backward_fn) continue;
      const Array& g = n->grad_buffer();
      if (!g.all_finite()) throw NumericError(std::string(n->op) + ": non-finite gradient");
      n->backward_fn(g);
    }
  }

 private:
  std::vector<TensorNode*> order_;
};

// Accumulates d(loss)/d(t) into every recorded tensor that requires a
// gradient. Parameters outside the graph keep whatever they held (zero after
// zero_grad()).
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  if (!loss.requires_grad()) return;
  TapeGraph::record(loss).run_backward();
}

}  // namespace mstar
