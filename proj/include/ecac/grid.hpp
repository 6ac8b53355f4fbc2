#pragma once

// Dense row-major double grids with reverse-mode gradient accumulation.
//
// A Grid is a cheap handle onto a node of the computation graph. Copying the
// handle shares the node. Results of operations are immutable; only leaves
// (parameters, buffers, constants) expose mutable storage.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ecac {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_size(const Shape& shape);

namespace detail {
struct Node;
}

class Grid {
 public:
  /// 0-dimensional constant zero.
  Grid();

  static Grid zeros(Shape shape, bool requires_grad = false);
  static Grid full(Shape shape, double value, bool requires_grad = false);
  static Grid from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Grid scalar(double value, bool requires_grad = false);

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> values() const;
  /// The single value of a one-element grid.
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  /// Accumulated gradient. Throws ContractError when none was allocated.
  std::span<const double> grad() const;
  void zero_grad();

  /// Writable storage; only for leaves (parameters and buffers).
  std::span<double> mutable_values();

  /// New leaf holding a copy of the values, outside any graph.
  Grid detach() const;

  bool same_node(const Grid& other) const { return node_ == other.node_; }
  const char* op_name() const;

 private:
  explicit Grid(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend struct GraphAccess;
};

// ---- operations -----------------------------------------------------------

Grid matmul(const Grid& a, const Grid& b);
Grid transpose(const Grid& a);
Grid reshape(const Grid& a, Shape shape);

Grid add(const Grid& a, const Grid& b);
Grid sub(const Grid& a, const Grid& b);
Grid mul(const Grid& a, const Grid& b);
Grid scale(const Grid& a, double factor);
Grid relu(const Grid& a);

/// Sum of all elements as a 0-d grid.
Grid sum(const Grid& a);

/// x[m x k] + b[k] broadcast over rows.
Grid add_row_bias(const Grid& x, const Grid& bias);
/// x[m x k] + b[m] broadcast over columns.
Grid add_col_bias(const Grid& x, const Grid& bias);
/// x[m x k] * g[m] broadcast over columns.
Grid scale_rows(const Grid& x, const Grid& factors);
/// [a | b] along the column axis.
Grid concat_cols(const Grid& a, const Grid& b);

/// Max-subtracted softmax along `axis`.
Grid softmax(const Grid& x, std::size_t axis);
Grid log_softmax(const Grid& x, std::size_t axis);

inline constexpr double kCosineEps = 1e-8;

/// Cosine similarity of two vectors; each norm is clamped below by eps.
/// Returns a 0-d grid.
Grid cosine_similarity(const Grid& a, const Grid& b, double eps = kCosineEps);
/// Column-wise cosine similarity of a[k x m] and b[k x m] -> [m].
Grid column_cosine(const Grid& a, const Grid& b, double eps = kCosineEps);

/// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from loss.
void backward(const Grid& loss);

// ---- finite-difference verification --------------------------------------

struct NamedGrid {
  std::string name;
  Grid grid;
};

struct GradCheckReport {
  std::string operation;
  double max_relative_error = 0.0;
  std::vector<std::pair<std::string, double>> per_parameter;
  double step = 0.0;
};

/// |a - n| / max(|a|, |n|, 1e-8)
double gradcheck_relative_error(double analytic, double numeric);

/// Compares backward() against central differences for every scalar of every
/// parameter. `loss_fn` must rebuild the graph from the current parameter
/// values on each call.
GradCheckReport grad_check(const std::string& operation, const std::function<Grid()>& loss_fn,
                           std::vector<NamedGrid> params, double step = 1e-5);

}  // namespace ecac
