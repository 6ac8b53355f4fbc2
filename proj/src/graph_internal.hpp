#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "ecac/grid.hpp"

namespace ecac {
namespace detail {

// Receives the output gradient and one accumulation buffer per input
// (nullptr when that input does not need a gradient). Must add, never assign.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<std::vector<double>*> grad_in)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  bool grad_allocated = false;
  std::vector<double> grad;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
  const char* op = "leaf";
};

}  // namespace detail

struct GraphAccess {
  static const std::shared_ptr<detail::Node>& node(const Grid& g) { return g.node_; }
  static Grid wrap(std::shared_ptr<detail::Node> n) { return Grid(std::move(n)); }

  /// Builds an operation result. Inputs and the backward closure are kept
  /// only if some input requires a gradient.
  static Grid make(const char* op, Shape shape, std::vector<double> value,
                   std::vector<Grid> inputs, detail::BackwardFn backward);
};

}  // namespace ecac
