#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mtl {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until the first accumulation
  bool requires_grad = false;
  bool released = false;
  std::uint64_t seq = 0;  // execution order; 0 for leaves
  std::string op;         // empty for leaves
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return op.empty(); }
  // Allocates a zero gradient buffer on first use.
  std::vector<double>& grad_buffer();
};

}  // namespace detail

// Dense row-major tensor handle. Copies share storage; use clone() for a
// deep copy. Image tensors use the (N, C, H, W) layout.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> values() const;
  // Mutable access is meant for leaves (parameters, inputs); editing an
  // interior node does not propagate anywhere.
  std::span<double> mutable_values();
  double item() const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  // Empty span when no gradient has been accumulated.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Fresh leaf with copied values and no history.
  Tensor clone(bool requires_grad = false) const;
  // Leaf sharing no history with this tensor; same values.
  Tensor detach() const { return clone(false); }

  // Throws NumericError naming `what` if any value is NaN or infinite.
  void check_finite(std::string_view what) const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

// Ordered record of the operations reachable from a root, in the exact
// reverse of the order in which they executed.
class Graph {
 public:
  static Graph trace(const Tensor& root);

  std::size_t size() const { return ops_.size(); }
  const std::vector<std::shared_ptr<detail::Node>>& ops() const { return ops_; }
  std::vector<std::string> op_names() const;

 private:
  std::vector<std::shared_ptr<detail::Node>> ops_;
};

struct BackwardOptions {
  // Keep the recorded closures so backward can run again on the same
  // graph. Interior gradients are reset at the start of each pass.
  bool retain_graph = false;
};

// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from
// `loss`. Throws GraphError for a non-scalar or detached root, and for a
// second pass over a graph that was not retained.
void backward(const Tensor& loss, BackwardOptions options = {});

// While alive, ops on this thread record no history (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

namespace detail {

// Creates the output node of an op. Parents are kept (and the backward
// closure installed) only when at least one of them requires a gradient.
Tensor make_result(std::string op, Shape shape, std::vector<double> value,
                   std::vector<Tensor> parents, std::function<void(Node&)> backward_fn);

}  // namespace detail

}  // namespace mtl
