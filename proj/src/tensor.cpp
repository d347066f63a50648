#include "mgbp/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

namespace mgbp {

namespace {

std::atomic<int64_t> g_live_bytes{0};
std::atomic<int64_t> g_peak_bytes{0};
thread_local bool t_grad_enabled = true;

void track_alloc(int64_t bytes) {
    const int64_t now = g_live_bytes.fetch_add(bytes) + bytes;
    int64_t peak = g_peak_bytes.load();
    while (now > peak && !g_peak_bytes.compare_exchange_weak(peak, now)) {
    }
}

}  // namespace

std::string Shape::str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
}

MemoryStats memory_stats() { return {g_live_bytes.load(), g_peak_bytes.load()}; }

void reset_peak_memory() { g_peak_bytes.store(g_live_bytes.load()); }

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

namespace detail {

template <typename T>
Node<T>::Node(Shape s, std::vector<T> d) : shape(s), data(std::move(d)) {
    if (static_cast<int64_t>(data.size()) != shape.numel()) {
        throw ShapeError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape.str());
    }
    track_alloc(static_cast<int64_t>(data.size() * sizeof(T)));
}

template <typename T>
Node<T>::~Node() {
    g_live_bytes.fetch_sub(static_cast<int64_t>((data.size() + grad.size()) * sizeof(T)));
}

template <typename T>
std::vector<T>& Node<T>::grad_buffer() {
    if (grad.empty()) {
        grad.assign(data.size(), T(0));
        track_alloc(static_cast<int64_t>(grad.size() * sizeof(T)));
    }
    return grad;
}

template <typename T>
void Node<T>::release_grad() {
    g_live_bytes.fetch_sub(static_cast<int64_t>(grad.size() * sizeof(T)));
    std::vector<T>().swap(grad);
}

template <typename T>
BasicTensor<T> record(Shape shape, std::vector<T> data, std::vector<NodePtr<T>> parents,
                      std::function<void(Node<T>&)> backward) {
    auto node = std::make_shared<Node<T>>(shape, std::move(data));
    const bool track =
        grad_enabled() && std::any_of(parents.begin(), parents.end(), needs_grad<T>);
    if (track) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward = std::move(backward);
    }
    return BasicTensor<T>::from_node(std::move(node));
}

template struct Node<float>;
template struct Node<double>;
template BasicTensor<float> record(Shape, std::vector<float>, std::vector<NodePtr<float>>,
                                   std::function<void(Node<float>&)>);
template BasicTensor<double> record(Shape, std::vector<double>, std::vector<NodePtr<double>>,
                                    std::function<void(Node<double>&)>);

}  // namespace detail

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data)
    : node_(std::make_shared<detail::Node<T>>(shape, std::move(data))) {}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill)
    : node_(std::make_shared<detail::Node<T>>(
          shape, std::vector<T>(static_cast<size_t>(std::max<int64_t>(shape.numel(), 0)), fill))) {}

template <typename T>
BasicTensor<T> BasicTensor<T>::from_node(detail::NodePtr<T> node) {
    BasicTensor t;
    t.node_ = std::move(node);
    return t;
}

template <typename T>
const Shape& BasicTensor<T>::shape() const {
    if (!node_) throw std::logic_error("use of an undefined tensor");
    return node_->shape;
}

template <typename T>
std::span<const T> BasicTensor<T>::data() const {
    if (!node_) throw std::logic_error("use of an undefined tensor");
    return node_->data;
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_data() {
    if (!node_) throw std::logic_error("use of an undefined tensor");
    return node_->data;
}

template <typename T>
T BasicTensor<T>::at(int64_t n, int64_t c, int64_t h, int64_t w) const {
    const Shape& s = shape();
    return node_->data[static_cast<size_t>(((n * s.c + c) * s.h + h) * s.w + w)];
}

template <typename T>
T BasicTensor<T>::item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape().str());
    return node_->data[0];
}

template <typename T>
bool BasicTensor<T>::requires_grad() const {
    return node_ && node_->requires_grad;
}

template <typename T>
BasicTensor<T>& BasicTensor<T>::set_requires_grad(bool on) {
    if (!node_) throw std::logic_error("use of an undefined tensor");
    if (node_->backward) throw GradError("requires_grad can only be set on leaf tensors");
    node_->requires_grad = on;
    return *this;
}

template <typename T>
bool BasicTensor<T>::has_grad() const {
    return node_ && !node_->grad.empty();
}

template <typename T>
std::span<const T> BasicTensor<T>::grad() const {
    if (!has_grad()) throw GradError("tensor has no gradient buffer");
    return node_->grad;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
    if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
void BasicTensor<T>::backward() const {
    if (!node_) throw GradError("backward on an undefined tensor");
    if (numel() != 1) throw GradError("backward requires a scalar output, got " + shape().str());
    if (!node_->requires_grad) throw GradError("backward on a tensor detached from any graph");

    // Post-order DFS gives a topological order with parents before children.
    std::vector<detail::Node<T>*> order;
    std::unordered_set<detail::Node<T>*> seen;
    std::vector<std::pair<detail::Node<T>*, size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node<T>* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (detail::Node<T>* n : order) {
        if (n->backward) n->release_grad();
    }
    node_->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node<T>* n = *it;
        if (n->backward && !n->grad.empty()) {
            n->backward(*n);
            n->release_grad();
        }
    }
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
    return clone();
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
    return BasicTensor(shape(), std::vector<T>(node_->data));
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace mgbp
