#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "framegen/errors.hpp"

namespace framegen {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node;
using BackwardFn = std::function<void(Node&)>;

// One vertex of the autodiff graph. Values are immutable once the op that
// produced them returns; only leaves may be mutated (by optimizers).
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
  const char* op = "leaf";

  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense row-major tensor of doubles with reverse-mode autodiff.
///
/// `Tensor` is a cheap handle: copies share the underlying node. Operations in
/// ops.hpp build new nodes and, when any input requires a gradient (and
/// recording is enabled, see NoGradGuard), remember how to propagate
/// gradients back to their inputs.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::size_t dim(std::size_t axis) const;

  std::span<const double> data() const;
  // Only leaves are mutable; mutating an interior node would desynchronize
  // values that downstream nodes already consumed.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat) const { return data()[flat]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;
  const char* op() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Fresh leaf holding a copy of the values.
  Tensor detach() const;
  Tensor clone(bool requires_grad) const;

  // True when `leaf` is reachable from this tensor through recorded graph edges.
  bool depends_on(const Tensor& leaf) const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on the current thread for its lifetime.
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

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate (call
/// zero_grad between steps); visiting order is a deterministic topological
/// order derived from parent order.
void backward(const Tensor& loss);

}  // namespace framegen
