#include "mtl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "mtl/error.hpp"

namespace mtl {

namespace {

thread_local std::uint64_t next_seq = 1;
thread_local bool grad_mode = true;

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != 0) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<double>& detail::Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(node_->shape));
  }
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->value.size(); }

std::span<const double> Tensor::values() const { return node_->value; }

std::span<double> Tensor::mutable_values() { return node_->value; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

bool Tensor::is_leaf() const { return node_->is_leaf(); }

bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::mutable_grad() { return node_->grad_buffer(); }

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::clone(bool requires_grad) const { return Tensor(node_->shape, node_->value, requires_grad); }

void Tensor::check_finite(std::string_view what) const {
  // x - x is 0 for finite x and NaN otherwise; scan for the index only on failure.
  const auto& v = node_->value;
  double probe[4] = {0.0, 0.0, 0.0, 0.0};
  std::size_t i = 0;
  for (; i + 4 <= v.size(); i += 4) {
    for (std::size_t l = 0; l < 4; ++l) probe[l] += v[i + l] - v[i + l];
  }
  for (; i < v.size(); ++i) probe[0] += v[i] - v[i];
  if (probe[0] + probe[1] + probe[2] + probe[3] == 0.0) return;
  for (std::size_t i = 0; i < node_->value.size(); ++i) {
    if (!std::isfinite(node_->value[i])) {
      throw NumericError(std::string(what) + ": non-finite value at flat index " + std::to_string(i));
    }
  }
}

Graph Graph::trace(const Tensor& root) {
  Graph g;
  if (!root.defined()) return g;
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::shared_ptr<detail::Node>> stack{root.node()};
  while (!stack.empty()) {
    auto node = std::move(stack.back());
    stack.pop_back();
    if (!seen.insert(node.get()).second) continue;
    if (node->is_leaf() || !node->requires_grad) continue;
    for (const auto& p : node->parents) {
      if (p->requires_grad) stack.push_back(p);
    }
    g.ops_.push_back(std::move(node));
  }
  std::sort(g.ops_.begin(), g.ops_.end(),
            [](const auto& a, const auto& b) { return a->seq > b->seq; });
  return g;
}

std::vector<std::string> Graph::op_names() const {
  std::vector<std::string> names;
  names.reserve(ops_.size());
  for (const auto& op : ops_) names.push_back(op->op);
  return names;
}

void backward(const Tensor& loss, BackwardOptions options) {
  if (!loss.defined()) throw GraphError("backward on an undefined tensor");
  if (loss.numel() != 1) {
    throw GraphError("backward requires a scalar root, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) throw GraphError("backward on a detached root (no input requires grad)");
  const auto& root = loss.node();
  if (root->released) throw GraphError("backward already ran on this graph; rebuild it or retain_graph");

  Graph graph = Graph::trace(loss);
  for (const auto& op : graph.ops()) {
    if (op->released) throw GraphError("graph contains nodes released by an earlier backward");
    std::fill(op->grad.begin(), op->grad.end(), 0.0);
  }
  if (root->is_leaf()) {
    root->grad_buffer()[0] += 1.0;
    return;
  }
  root->grad_buffer()[0] = 1.0;
  for (const auto& op : graph.ops()) {
    if (op->grad.empty()) continue;  // unreachable from root's gradient flow
    op->backward_fn(*op);
  }
  if (!options.retain_graph) {
    for (const auto& op : graph.ops()) {
      op->backward_fn = nullptr;
      op->parents.clear();
      op->released = true;
    }
  }
}

NoGradGuard::NoGradGuard() : previous_(grad_mode) { grad_mode = false; }

NoGradGuard::~NoGradGuard() { grad_mode = previous_; }

bool grad_enabled() { return grad_mode; }

namespace detail {

Tensor make_result(std::string op, Shape shape, std::vector<double> value,
                   std::vector<Tensor> parents, std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = std::move(op);
  node->seq = next_seq++;
  const bool needs_grad = grad_mode && std::any_of(parents.begin(), parents.end(),
                                      [](const Tensor& p) { return p.requires_grad(); });
  if (needs_grad) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor::from_node(std::move(node));
}

}  // namespace detail

}  // namespace mtl
