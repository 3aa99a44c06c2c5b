#pragma once

// Dense row-major tensor with taped reverse-mode differentiation.
//
// A Tensor is a shared handle to a Node. Operations whose inputs require
// gradients record their result on the innermost active Graph; Graph::backward
// replays the tape in reverse creation order, which is a valid reverse
// topological order because a node is always created after its inputs.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace encbridge {

using Shape = std::vector<std::size_t>;
using TokenId = std::int32_t;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Thrown on any shape or dimension disagreement between operands.
class DimensionError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until first touched
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    std::span<T> ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
        return grad;
    }
};

template <typename T>
class Tensor {
   public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);
    explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor scalar(T value) { return full({}, value); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t numel() const { return node_->value.size(); }

    std::span<const T> data() const { return node_->value; }
    std::span<T> data() { return node_->value; }
    /// Gradient buffer; allocated as zeros on first access.
    std::span<const T> grad() const { return node_->ensure_grad(); }
    std::span<T> mutable_grad() { return node_->ensure_grad(); }
    bool has_grad() const { return !node_->grad.empty(); }
    void zero_grad() { node_->grad.clear(); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    T item() const;
    T at(std::initializer_list<std::size_t> index) const;

    /// Deep copy of value (not grad), detached from any graph.
    Tensor clone() const;
    /// Same data, new shape with equal element count; differentiable.
    Tensor reshape(Shape shape) const;

    const std::shared_ptr<Node<T>>& node() const { return node_; }

   private:
    std::shared_ptr<Node<T>> node_;
};

/// Tape of recorded operations.
template <typename T>
class Graph {
   public:
    void record(std::shared_ptr<Node<T>> node) { nodes_.push_back(std::move(node)); }
    std::size_t size() const { return nodes_.size(); }

    /// Seeds d(loss)/d(loss) = 1 and visits every recorded node once in
    /// reverse order. Throws DimensionError when loss is not a scalar.
    void backward(const Tensor<T>& loss);

    /// Innermost graph installed on this thread by GraphScope, or nullptr.
    static Graph* active();

   private:
    template <typename>
    friend class GraphScope;
    std::vector<std::shared_ptr<Node<T>>> nodes_;
};

/// RAII installer of a Graph as the recording target for this thread.
template <typename T>
class GraphScope {
   public:
    GraphScope();
    ~GraphScope();
    GraphScope(const GraphScope&) = delete;
    GraphScope& operator=(const GraphScope&) = delete;

    Graph<T>& graph() { return graph_; }

   private:
    Graph<T> graph_;
    Graph<T>* previous_;
};

/// While alive, operations on this thread produce untracked results even when
/// their inputs require gradients.
class NoGradGuard {
   public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

    static bool enabled();

   private:
    bool previous_;
};

/// Runs backward on the innermost active graph.
template <typename T>
void backward(const Tensor<T>& loss);

// ---- operations -----------------------------------------------------------

/// a[..., k] x b[k, n] -> [..., n]; leading dimensions of a are flattened.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

/// x[..., n] + bias[n], broadcast over rows.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

/// Elementwise product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& offset, T eps);

/// Rows of table[vocab, d] selected by ids; result shape is out_shape + {d}.
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const TokenId> ids, Shape out_shape);

/// Concatenates tensors of identical leading shape along the last axis.
template <typename T>
Tensor<T> concat_last(const std::vector<Tensor<T>>& parts);

/// Multi-head scaled dot-product attention. q is [batch, q_len, width],
/// k and v are [batch, k_len, width]. key_valid is batch*k_len (empty = all).
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                    std::span<const std::uint8_t> key_valid, bool causal);

/// Summed negative log-likelihood and number of counted (non-pad) targets.
struct NllTotal {
    double sum = 0;
    std::size_t count = 0;
};

/// Grad-free token NLL over logits[..., vocab]; positions whose target equals
/// pad_id are skipped.
template <typename T>
NllTotal nll_total(const Tensor<T>& logits, std::span<const TokenId> targets, TokenId pad_id);

/// Mean NLL over non-pad targets. Throws std::domain_error when every target is pad.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const TokenId> targets, TokenId pad_id);

}  // namespace encbridge
