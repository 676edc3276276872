#include "evlg/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "evlg/errors.hpp"

namespace evlg {

namespace {
thread_local bool t_grad_enabled = true;
}

const char* category_name(ErrorCategory category) {
    switch (category) {
        case ErrorCategory::Dimension:
            return "dimension";
        case ErrorCategory::Index:
            return "index";
        case ErrorCategory::Contract:
            return "contract";
        case ErrorCategory::Config:
            return "config";
        case ErrorCategory::Checkpoint:
            return "checkpoint";
        case ErrorCategory::Training:
            return "training";
    }
    return "unknown";
}

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (auto extent : shape) n *= extent;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << 'x';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

std::span<double> detail::Node::grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
}

static void check_shape(const Shape& shape, std::size_t data_size) {
    for (auto extent : shape) {
        if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_to_string(shape));
    }
    if (shape_size(shape) != data_size) {
        throw DimensionError("shape " + shape_to_string(shape) + " does not hold " + std::to_string(data_size) +
                             " values");
    }
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    std::vector<double> data(shape_size(shape), value);
    return from_data(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    check_shape(shape, data.size());
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from_data({1}, {value}, requires_grad); }

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= rank()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_to_string(shape()));
    }
    return node_->shape[axis];
}

double Tensor::item() const {
    if (size() != 1) throw ContractError("item() on non-scalar tensor of shape " + shape_to_string(shape()));
    return node_->data[0];
}

void Tensor::zero_grad() { node_->grad.clear(); }

void Tensor::backward() const {
    if (size() != 1) throw ContractError("backward() needs a scalar loss, got shape " + shape_to_string(shape()));
    if (!requires_grad()) throw ContractError("backward() on a tensor that does not require grad");

    // Iterative post-order DFS gives a topological order (parents first).
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
            continue;
        }
        order.push_back(node);
        stack.pop_back();
    }

    // Interior gradients are per-pass scratch; leaf gradients accumulate.
    for (auto* node : order) {
        if (node->backward) {
            node->grad.assign(node->data.size(), 0.0);
        } else {
            node->grad_buffer();
        }
    }
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward) (*it)->backward(**it);
    }
}

Tensor Tensor::detach() const { return from_data(shape(), node_->data, false); }

Tensor Tensor::clone(bool requires_grad) const { return from_data(shape(), node_->data, requires_grad); }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                   std::function<void(detail::Node&)> backward) {
    check_shape(shape, data.size());
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    if (t_grad_enabled) {
        bool any = std::any_of(parents.begin(), parents.end(), [](const Tensor& t) { return t.requires_grad(); });
        if (any) {
            node->requires_grad = true;
            node->parents.reserve(parents.size());
            for (auto& p : parents) node->parents.push_back(p.node_ptr());
            node->backward = std::move(backward);
        }
    }
    return Tensor(std::move(node));
}

}  // namespace evlg
