#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mgbp {

/// Rank-4 extent (batch, channels, height, width). Rank-3 tensors use n = 1,
/// scalars are (1, 1, 1, 1).
struct Shape {
    int64_t n = 1;
    int64_t c = 1;
    int64_t h = 1;
    int64_t w = 1;

    int64_t numel() const { return n * c * h * w; }
    int64_t plane() const { return h * w; }
    std::string str() const;

    friend bool operator==(const Shape&, const Shape&) = default;
};

/// Raised on any shape contract violation. The message names the dimension.
class ShapeError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// Raised on misuse of reverse-mode differentiation.
class GradError : public std::logic_error {
  public:
    using std::logic_error::logic_error;
};

/// Live and peak bytes held by tensor data buffers, process wide.
struct MemoryStats {
    int64_t live_bytes = 0;
    int64_t peak_bytes = 0;
};
MemoryStats memory_stats();
void reset_peak_memory();

/// Tape recording switch, per thread. Ops record their backward closure only
/// while enabled and when at least one operand requires a gradient.
bool grad_enabled();

class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool previous_;
};

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backward;

    Node(Shape s, std::vector<T> d);
    ~Node();
    Node(const Node&) = delete;
    Node& operator=(const Node&) = delete;

    std::vector<T>& grad_buffer();
    void release_grad();
};

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

}  // namespace detail

template <typename T>
class BasicTensor {
  public:
    using value_type = T;

    BasicTensor() = default;
    BasicTensor(Shape shape, std::vector<T> data);
    explicit BasicTensor(Shape shape, T fill = T(0));

    static BasicTensor zeros(Shape shape) { return BasicTensor(shape, T(0)); }
    static BasicTensor scalar(T v) { return BasicTensor(Shape{}, v); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int64_t numel() const { return shape().numel(); }

    std::span<const T> data() const;
    // In-place writes are reserved for leaves (parameters, freshly built inputs).
    std::span<T> mutable_data();

    T at(int64_t n, int64_t c, int64_t h, int64_t w) const;
    T item() const;

    bool requires_grad() const;
    BasicTensor& set_requires_grad(bool on);
    bool has_grad() const;
    std::span<const T> grad() const;
    void zero_grad();

    /// Reverse accumulation from a scalar. Leaf gradients accumulate across
    /// calls; intermediate gradients are rebuilt per call.
    void backward() const;

    /// Same values, no history, requires_grad = false.
    BasicTensor detach() const;
    /// Deep copy of the values.
    BasicTensor clone() const;

    const detail::NodePtr<T>& node() const { return node_; }
    static BasicTensor from_node(detail::NodePtr<T> node);

  private:
    detail::NodePtr<T> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

template <typename To, typename From>
BasicTensor<To> tensor_cast(const BasicTensor<From>& t) {
    std::vector<To> out(t.data().begin(), t.data().end());
    return BasicTensor<To>(t.shape(), std::move(out));
}

namespace detail {

/// Wraps freshly computed values as an op result and, when recording, attaches
/// the backward closure and the operands it reads.
template <typename T>
BasicTensor<T> record(Shape shape, std::vector<T> data, std::vector<NodePtr<T>> parents,
                      std::function<void(Node<T>&)> backward);

template <typename T>
bool needs_grad(const NodePtr<T>& n) {
    return n && n->requires_grad;
}

}  // namespace detail

}  // namespace mgbp
