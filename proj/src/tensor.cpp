#include "hiervid/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace hiervid {

namespace {

std::atomic<std::uint64_t> g_seq{0};

std::uint64_t next_seq() { return g_seq.fetch_add(1, std::memory_order_relaxed) + 1; }

void require_finite(const char* op, std::span<const double> values) {
    for (double v : values)
        if (!std::isfinite(v)) throw NonFiniteError(op);
}

}  // namespace

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

ShapeError::ShapeError(const std::string& op, const Shape& a, const Shape& b)
    : TensorError(op + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b)) {}

ShapeError::ShapeError(const std::string& op, const std::string& detail)
    : TensorError(op + ": " + detail) {}

NonFiniteError::NonFiniteError(const std::string& op)
    : TensorError(op + ": non-finite input value") {}

std::span<double> detail::Node::grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    for (auto e : shape)
        if (e == 0) throw ShapeError("tensor", "zero extent in shape " + shape_str(shape));
    if (values.size() != shape_numel(shape))
        throw ShapeError("tensor", "data length " + std::to_string(values.size()) +
                                       " does not match shape " + shape_str(shape));
    require_finite("tensor", values);
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    node->seq = next_seq();
    return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
    if (!node_) throw GraphError("use of an undefined tensor");
    return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) throw ShapeError("dim", "axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
    shape();
    return node_->value;
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item", "tensor of shape " + shape_str(shape()) + " is not a scalar");
    return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    const auto& s = shape();
    if (index.size() != s.size()) throw ShapeError("at", "index rank does not match " + shape_str(s));
    std::size_t flat = 0;
    std::size_t i = 0;
    for (auto v : index) {
        if (v >= s[i]) throw ShapeError("at", "index out of range for " + shape_str(s));
        flat = flat * s[i] + v;
        ++i;
    }
    return node_->value[flat];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return node_ && node_->inputs.empty(); }
bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    shape();
    return node_->grad;
}

void Tensor::zero_grad() {
    if (node_) node_->grad.clear();
}

std::span<double> Tensor::leaf_data() {
    if (!is_leaf()) throw GraphError("leaf_data: tensor is not a leaf");
    return node_->value;
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                   std::vector<Tensor> inputs, std::function<void(detail::Node&)> backward) {
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->op = op;
    node->seq = next_seq();
    bool rg = false;
    for (const auto& in : inputs) rg = rg || in.requires_grad();
    node->requires_grad = rg;
    if (rg) {
        node->inputs.reserve(inputs.size());
        for (auto& in : inputs) node->inputs.push_back(in.node());
        node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
    if (!loss.defined()) throw GraphError("backward: undefined loss");
    if (loss.numel() != 1)
        throw GraphError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    if (!loss.requires_grad()) throw GraphError("backward: loss is detached from every trainable leaf");

    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<detail::Node*> stack{loss.node().get()};
    while (!stack.empty()) {
        auto* n = stack.back();
        stack.pop_back();
        if (!seen.insert(n).second) continue;
        order.push_back(n);
        for (auto& in : n->inputs)
            if (in->requires_grad) stack.push_back(in.get());
    }
    std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->seq > b->seq; });

    for (auto* n : order)
        if (!n->inputs.empty()) n->grad.clear();
    loss.node()->grad_buffer()[0] += 1.0;

    for (auto* n : order) {
        if (n->inputs.empty() || n->grad.empty() || !n->backward) continue;
        n->backward(*n);
    }
}

}  // namespace hiervid
