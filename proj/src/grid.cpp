#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "ecac/errors.hpp"
#include "ecac/grid.hpp"
#include "graph_internal.hpp"

namespace ecac {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

void require_finite(const std::vector<double>& v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(what) + ": non-finite value");
  }
}

std::shared_ptr<detail::Node> make_leaf(Shape shape, std::vector<double> values, bool rg) {
  if (shape_size(shape) != values.size()) {
    throw DimensionError("grid shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_size(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  require_finite(values, "grid construction");
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = rg;
  return n;
}

}  // namespace

Grid GraphAccess::make(const char* op, Shape shape, std::vector<double> value,
                       std::vector<Grid> inputs, detail::BackwardFn backward) {
  require_finite(value, op);
  auto n = std::make_shared<detail::Node>();
  n->op = op;
  n->shape = std::move(shape);
  n->value = std::move(value);
  for (const auto& in : inputs) {
    if (in.requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) {
    n->inputs.reserve(inputs.size());
    for (const auto& in : inputs) n->inputs.push_back(GraphAccess::node(in));
    n->backward = std::move(backward);
  }
  return Grid(std::move(n));
}

Grid::Grid() : node_(make_leaf({}, {0.0}, false)) {}

Grid Grid::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_size(shape);
  return Grid(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Grid Grid::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_size(shape);
  return Grid(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Grid Grid::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  return Grid(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Grid Grid::scalar(double value, bool requires_grad) {
  return Grid(make_leaf({}, {value}, requires_grad));
}

const Shape& Grid::shape() const { return node_->shape; }

std::size_t Grid::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape()));
  }
  return node_->shape[axis];
}

std::size_t Grid::size() const { return node_->value.size(); }

std::span<const double> Grid::values() const { return node_->value; }

double Grid::item() const {
  if (size() != 1) {
    throw ContractError("item() on grid of shape " + shape_str(shape()));
  }
  return node_->value[0];
}

double Grid::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) {
    throw DimensionError("index rank " + std::to_string(index.size()) + " for shape " +
                         shape_str(shape()));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= node_->shape[axis]) {
      throw DimensionError("index out of range for shape " + shape_str(shape()));
    }
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->value[flat];
}

bool Grid::requires_grad() const { return node_->requires_grad; }
bool Grid::is_leaf() const { return !node_->backward; }
bool Grid::has_grad() const { return node_->grad_allocated; }

std::span<const double> Grid::grad() const {
  if (!node_->grad_allocated) {
    throw ContractError("grid has no accumulated gradient");
  }
  return node_->grad;
}

void Grid::zero_grad() {
  if (node_->grad_allocated) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

std::span<double> Grid::mutable_values() {
  if (!is_leaf() || std::string(node_->op) != "leaf") {
    throw ContractError(std::string("cannot mutate result of operation '") + node_->op + "'");
  }
  return node_->value;
}

Grid Grid::detach() const { return Grid(make_leaf(node_->shape, node_->value, false)); }

const char* Grid::op_name() const { return node_->op; }

void backward(const Grid& loss) {
  if (loss.rank() != 0) {
    throw ContractError("backward() needs a 0-dimensional loss, got shape " +
                        shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  using detail::Node;
  // Post-order DFS gives inputs before consumers.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  Node* root = GraphAccess::node(loss).get();
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_map<Node*, std::vector<double>> grads;
  grads[root] = {1.0};
  std::vector<std::vector<double>*> slots;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    const std::vector<double>& gout = found->second;
    if (node->backward) {
      slots.assign(node->inputs.size(), nullptr);
      for (std::size_t i = 0; i < node->inputs.size(); ++i) {
        Node* in = node->inputs[i].get();
        if (!in->requires_grad) continue;
        auto& buf = grads[in];
        if (buf.empty()) buf.assign(in->value.size(), 0.0);
        slots[i] = &buf;
      }
      node->backward(gout, slots);
    } else {
      if (!node->grad_allocated) {
        node->grad.assign(node->value.size(), 0.0);
        node->grad_allocated = true;
      }
      for (std::size_t i = 0; i < gout.size(); ++i) node->grad[i] += gout[i];
    }
  }
}

}  // namespace ecac
