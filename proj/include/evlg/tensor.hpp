#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace evlg {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

// One vertex of the recorded graph. Leaves have no backward function.
struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until something is accumulated
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backward;

    std::span<double> grad_buffer();
};

}  // namespace detail

// Dense row-major array of doubles with optional reverse-mode gradient.
//
// A Tensor is a shared handle: copies alias the same node. Operations never
// mutate their inputs; they return new tensors whose nodes remember the
// parents and how to push gradients back to them.
class Tensor {
   public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const { return node_->data.size(); }

    std::span<const double> data() const { return node_->data; }
    // Direct write access, intended for leaves (parameters, optimizer updates).
    std::span<double> mutable_data() { return node_->data; }
    double item() const;
    double at(std::size_t flat_index) const { return node_->data.at(flat_index); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool flag) { node_->requires_grad = flag; }
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    void zero_grad();

    // Reverse pass from a scalar. Leaf gradients accumulate across calls.
    void backward() const;

    // Same values, no graph history.
    Tensor detach() const;
    // Deep copy of the values into a fresh leaf.
    Tensor clone(bool requires_grad = false) const;

    detail::Node& node() const { return *node_; }
    const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

   private:
    std::shared_ptr<detail::Node> node_;
};

// Disables graph recording on the current thread for its lifetime.
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

// Builds an op result. The node records parents and a backward function only
// when recording is on and some parent requires a gradient.
Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                   std::function<void(detail::Node&)> backward);

}  // namespace evlg
