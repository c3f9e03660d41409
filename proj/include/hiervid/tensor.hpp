#pragma once
// Dense row-major float64 tensors with reverse-mode differentiation.
//
// A Tensor is a cheap handle to an immutable node. Operations record their
// inputs and a backward rule; backward() walks the reachable nodes in reverse
// creation order so each rule runs exactly once.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hiervid {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class TensorError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public TensorError {
  public:
    ShapeError(const std::string& op, const Shape& a, const Shape& b);
    ShapeError(const std::string& op, const std::string& detail);
};

class NonFiniteError : public TensorError {
  public:
    explicit NonFiniteError(const std::string& op);
};

class GraphError : public TensorError {
  public:
    using TensorError::TensorError;
};

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::uint64_t seq = 0;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    std::span<double> grad_buffer();  // allocates zeros on demand
};

}  // namespace detail

class Tensor {
  public:
    Tensor() = default;

    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const double> data() const;
    double item() const;
    double at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const;
    bool is_leaf() const;
    bool has_grad() const;
    std::span<const double> grad() const;
    void zero_grad();

    /// Writable storage of a leaf. Used by optimizers and finite differencing;
    /// throws for interior nodes.
    std::span<double> leaf_data();

    /// Same values, no history, no grad requirement.
    Tensor detach() const;

    const char* op_name() const;

    // Internal: used by the op implementations.
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    const std::shared_ptr<detail::Node>& node() const { return node_; }

  private:
    std::shared_ptr<detail::Node> node_;
};

/// Builds an interior node. `inputs` are recorded for backward and
/// requires_grad is inherited from them.
Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                   std::vector<Tensor> inputs, std::function<void(detail::Node&)> backward);

/// Populates d(loss)/d(leaf) for every requires_grad leaf reachable from the
/// scalar `loss`. Leaf grads accumulate; interior grads are reset first.
void backward(const Tensor& loss);

}  // namespace hiervid
