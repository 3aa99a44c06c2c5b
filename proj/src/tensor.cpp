#include "encbridge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "encbridge/kernels.hpp"

namespace encbridge {

namespace kn = kernels::parallel;

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

// ---- Tensor ---------------------------------------------------------------

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<Node<T>>()) {
    if (shape_numel(shape) != data.size())
        throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                             std::to_string(data.size()) + " values");
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank()) throw DimensionError("index rank mismatch for " + shape_str(shape()));
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
        if (i >= shape()[axis]) throw std::out_of_range("tensor index out of range");
        flat = flat * shape()[axis] + i;
        ++axis;
    }
    return node_->value[flat];
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
    return Tensor(node_->shape, node_->value, node_->requires_grad);
}

// ---- graph ----------------------------------------------------------------

namespace {

template <typename T>
thread_local Graph<T>* g_active = nullptr;

thread_local bool g_no_grad = false;

// Creates the output node. When any input requires grad the node keeps its
// parents and is recorded on the active graph.
template <typename T>
std::shared_ptr<Node<T>> make_result(Shape shape, std::vector<T> value,
                                     std::vector<std::shared_ptr<Node<T>>> parents) {
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    const bool track = !g_no_grad && std::any_of(parents.begin(), parents.end(),
                                   [](const auto& p) { return p->requires_grad; });
    if (track) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        if (Graph<T>* g = Graph<T>::active()) g->record(node);
    }
    return node;
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
}

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_no_grad) { g_no_grad = true; }
NoGradGuard::~NoGradGuard() { g_no_grad = previous_; }
bool NoGradGuard::enabled() { return g_no_grad; }

template <typename T>
Graph<T>* Graph<T>::active() {
    return g_active<T>;
}

template <typename T>
GraphScope<T>::GraphScope() : previous_(g_active<T>) {
    g_active<T> = &graph_;
}

template <typename T>
GraphScope<T>::~GraphScope() {
    g_active<T> = previous_;
}

template <typename T>
void Graph<T>::backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw DimensionError("backward requires a scalar loss, got " +
                             (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
    for (auto& n : nodes_) n->ensure_grad();
    auto seed = loss.node()->ensure_grad();
    seed[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node<T>& n = **it;
        if (n.backward) n.backward(n);
    }
}

template <typename T>
void backward(const Tensor<T>& loss) {
    Graph<T>* g = Graph<T>::active();
    if (!g) throw std::logic_error("backward called outside a GraphScope");
    g->backward(loss);
}

template <typename T>
Tensor<T> Tensor<T>::reshape(Shape new_shape) const {
    if (shape_numel(new_shape) != numel())
        throw DimensionError("reshape " + shape_str(shape()) + " -> " + shape_str(new_shape));
    auto out = make_result<T>(std::move(new_shape), node_->value, {node_});
    if (out->requires_grad) {
        out->backward = [](Node<T>& self) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            auto g = p.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        };
    }
    return Tensor<T>(out);
}

// ---- operations -----------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() < 2 || b.rank() != 2 || a.shape().back() != b.dim(0))
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    const std::size_t k = b.dim(0);
    const std::size_t n = b.dim(1);
    const std::size_t m = a.numel() / k;
    Shape out_shape = a.shape();
    out_shape.back() = n;
    std::vector<T> c(m * n);
    kn::gemm_nn<T>(a.data(), b.data(), c, m, k, n, false);
    auto out = make_result<T>(std::move(out_shape), std::move(c), {a.node(), b.node()});
    if (out->requires_grad) {
        out->backward = [m, k, n](Node<T>& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            if (pa.requires_grad) kn::gemm_nt<T>(self.grad, pb.value, pa.ensure_grad(), m, n, k, true);
            if (pb.requires_grad) kn::gemm_tn<T>(pa.value, self.grad, pb.ensure_grad(), k, m, n, true);
        };
    }
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "add");
    std::vector<T> c(a.numel());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = a.data()[i] + b.data()[i];
    auto out = make_result<T>(a.shape(), std::move(c), {a.node(), b.node()});
    if (out->requires_grad) {
        out->backward = [](Node<T>& self) {
            for (auto& p : self.parents) {
                if (!p->requires_grad) continue;
                auto g = p->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
            }
        };
    }
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
    if (bias.rank() != 1 || x.rank() < 1 || x.shape().back() != bias.dim(0))
        throw DimensionError("add_bias: " + shape_str(x.shape()) + " with bias " +
                             shape_str(bias.shape()));
    const std::size_t n = bias.dim(0);
    const std::size_t rows = x.numel() / n;
    std::vector<T> y(x.numel());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) y[r * n + j] = x.data()[r * n + j] + bias.data()[j];
    auto out = make_result<T>(x.shape(), std::move(y), {x.node(), bias.node()});
    if (out->requires_grad) {
        out->backward = [rows, n](Node<T>& self) {
            auto& px = *self.parents[0];
            auto& pb = *self.parents[1];
            if (px.requires_grad) {
                auto g = px.ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
            }
            if (pb.requires_grad) {
                auto g = pb.ensure_grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[r * n + j];
            }
        };
    }
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "mul");
    std::vector<T> c(a.numel());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = a.data()[i] * b.data()[i];
    auto out = make_result<T>(a.shape(), std::move(c), {a.node(), b.node()});
    if (out->requires_grad) {
        out->backward = [](Node<T>& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            if (pa.requires_grad) {
                auto g = pa.ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
            }
            if (pb.requires_grad) {
                auto g = pb.ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
            }
        };
    }
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
    std::vector<T> y(x.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x.data()[i] * factor;
    auto out = make_result<T>(x.shape(), std::move(y), {x.node()});
    if (out->requires_grad) {
        out->backward = [factor](Node<T>& self) {
            auto g = self.parents[0]->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
        };
    }
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    std::vector<T> y(x.numel());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x.data()[i] > T(0) ? x.data()[i] : T(0);
    auto out = make_result<T>(x.shape(), std::move(y), {x.node()});
    if (out->requires_grad) {
        out->backward = [](Node<T>& self) {
            auto& p = *self.parents[0];
            auto g = p.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i)
                if (p.value[i] > T(0)) g[i] += self.grad[i];
        };
    }
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T total = 0;
    for (T v : x.data()) total += v;
    auto out = make_result<T>({}, {total}, {x.node()});
    if (out->requires_grad) {
        out->backward = [](Node<T>& self) {
            auto g = self.parents[0]->ensure_grad();
            for (auto& v : g) v += self.grad[0];
        };
    }
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    if (axis >= x.rank())
        throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                             shape_str(x.shape()));
    const std::size_t n = x.dim(axis);
    std::size_t inner = 1;
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
    const std::size_t outer = x.numel() / (n * inner);

    std::vector<T> y(x.numel());
    if (inner == 1) {
        kn::softmax_rows<T>(x.data(), y, outer, n);
    } else {
        // Gather strided lanes into a contiguous row and scatter back.
        std::vector<T> row(n), res(n);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t in = 0; in < inner; ++in) {
                for (std::size_t j = 0; j < n; ++j) row[j] = x.data()[(o * n + j) * inner + in];
                kernels::reference::softmax_rows<T>(row, res, 1, n);
                for (std::size_t j = 0; j < n; ++j) y[(o * n + j) * inner + in] = res[j];
            }
    }
    auto out = make_result<T>(x.shape(), std::move(y), {x.node()});
    if (out->requires_grad) {
        out->backward = [outer, n, inner](Node<T>& self) {
            auto g = self.parents[0]->ensure_grad();
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t in = 0; in < inner; ++in) {
                    T dot = 0;
                    for (std::size_t j = 0; j < n; ++j) {
                        const std::size_t idx = (o * n + j) * inner + in;
                        dot += self.grad[idx] * self.value[idx];
                    }
                    for (std::size_t j = 0; j < n; ++j) {
                        const std::size_t idx = (o * n + j) * inner + in;
                        g[idx] += self.value[idx] * (self.grad[idx] - dot);
                    }
                }
        };
    }
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& offset, T eps) {
    if (gain.rank() != 1 || offset.shape() != gain.shape() || x.shape().back() != gain.dim(0))
        throw DimensionError("layer_norm: input " + shape_str(x.shape()) + " with gain " +
                             shape_str(gain.shape()) + " and offset " + shape_str(offset.shape()));
    const std::size_t n = gain.dim(0);
    const std::size_t rows = x.numel() / n;
    std::vector<T> y(x.numel());
    auto mean = std::make_shared<std::vector<T>>(rows);
    auto rstd = std::make_shared<std::vector<T>>(rows);
    kn::layer_norm_rows<T>(x.data(), gain.data(), offset.data(), y, *mean, *rstd, rows, n, eps);
    auto out = make_result<T>(x.shape(), std::move(y), {x.node(), gain.node(), offset.node()});
    if (out->requires_grad) {
        out->backward = [rows, n, mean, rstd](Node<T>& self) {
            auto& px = *self.parents[0];
            auto& pg = *self.parents[1];
            auto& po = *self.parents[2];
            std::span<T> gx = px.requires_grad ? px.ensure_grad() : std::span<T>{};
            std::span<T> gg = pg.requires_grad ? pg.ensure_grad() : std::span<T>{};
            std::span<T> go = po.requires_grad ? po.ensure_grad() : std::span<T>{};
            std::vector<T> xhat(n), dxhat(n);
            for (std::size_t r = 0; r < rows; ++r) {
                const T* in = px.value.data() + r * n;
                const T* dy = self.grad.data() + r * n;
                T sum_d = 0, sum_dx = 0;
                for (std::size_t j = 0; j < n; ++j) {
                    xhat[j] = (in[j] - (*mean)[r]) * (*rstd)[r];
                    dxhat[j] = dy[j] * pg.value[j];
                    sum_d += dxhat[j];
                    sum_dx += dxhat[j] * xhat[j];
                    if (!gg.empty()) gg[j] += dy[j] * xhat[j];
                    if (!go.empty()) go[j] += dy[j];
                }
                if (gx.empty()) continue;
                const T inv_n = T(1) / T(n);
                for (std::size_t j = 0; j < n; ++j)
                    gx[r * n + j] +=
                        (*rstd)[r] * (dxhat[j] - inv_n * sum_d - xhat[j] * inv_n * sum_dx);
            }
        };
    }
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const TokenId> ids, Shape out_shape) {
    if (table.rank() != 2) throw DimensionError("embedding: table must be 2-D, got " + shape_str(table.shape()));
    if (shape_numel(out_shape) != ids.size())
        throw DimensionError("embedding: " + std::to_string(ids.size()) + " ids for shape " +
                             shape_str(out_shape));
    const std::size_t vocab = table.dim(0);
    const std::size_t d = table.dim(1);
    std::vector<T> y(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
            throw std::out_of_range("embedding: token id " + std::to_string(ids[i]) +
                                    " outside vocabulary of " + std::to_string(vocab));
        std::copy_n(table.data().begin() + ids[i] * d, d, y.begin() + i * d);
    }
    out_shape.push_back(d);
    auto out = make_result<T>(std::move(out_shape), std::move(y), {table.node()});
    if (out->requires_grad) {
        out->backward = [ids = std::vector<TokenId>(ids.begin(), ids.end()), d](Node<T>& self) {
            auto g = self.parents[0]->ensure_grad();
            for (std::size_t i = 0; i < ids.size(); ++i)
                for (std::size_t j = 0; j < d; ++j) g[ids[i] * d + j] += self.grad[i * d + j];
        };
    }
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> concat_last(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw DimensionError("concat_last: no inputs");
    Shape lead = parts[0].shape();
    lead.pop_back();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        Shape pl = p.shape();
        pl.pop_back();
        if (pl != lead)
            throw DimensionError("concat_last: leading shape mismatch " + shape_str(parts[0].shape()) +
                                 " vs " + shape_str(p.shape()));
        widths.push_back(p.shape().back());
        total += widths.back();
    }
    const std::size_t rows = shape_numel(lead);
    std::vector<T> y(rows * total);
    std::size_t col = 0;
    std::vector<std::shared_ptr<Node<T>>> parents;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const auto src = parts[i].data();
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(src.begin() + r * widths[i], widths[i], y.begin() + r * total + col);
        col += widths[i];
        parents.push_back(parts[i].node());
    }
    Shape out_shape = lead;
    out_shape.push_back(total);
    auto out = make_result<T>(std::move(out_shape), std::move(y), std::move(parents));
    if (out->requires_grad) {
        out->backward = [rows, total, widths](Node<T>& self) {
            std::size_t c = 0;
            for (std::size_t i = 0; i < widths.size(); ++i) {
                auto& p = *self.parents[i];
                if (p.requires_grad) {
                    auto g = p.ensure_grad();
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < widths[i]; ++j)
                            g[r * widths[i] + j] += self.grad[r * total + c + j];
                }
                c += widths[i];
            }
        };
    }
    return Tensor<T>(out);
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                    std::span<const std::uint8_t> key_valid, bool causal) {
    if (q.rank() != 3 || k.rank() != 3 || k.shape() != v.shape() || q.dim(0) != k.dim(0) ||
        q.dim(2) != k.dim(2))
        throw DimensionError("attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                             ", v " + shape_str(v.shape()));
    if (heads == 0 || q.dim(2) % heads != 0)
        throw DimensionError("attention: width " + std::to_string(q.dim(2)) +
                             " not divisible by heads " + std::to_string(heads));
    if (!key_valid.empty() && key_valid.size() != k.dim(0) * k.dim(1))
        throw DimensionError("attention: key mask size " + std::to_string(key_valid.size()) +
                             " for keys " + shape_str(k.shape()));
    if (causal && q.dim(1) != k.dim(1))
        throw DimensionError("attention: causal mask needs equal query/key lengths");

    kernels::AttentionShape s{q.dim(0), q.dim(1), k.dim(1), heads, q.dim(2) / heads};
    kernels::AttentionMask mask{key_valid, causal};
    std::vector<T> o(q.numel());
    auto probs = std::make_shared<std::vector<T>>(s.prob_size());
    kn::attention_forward<T>(q.data(), k.data(), v.data(), o, *probs, s, mask);
    auto out = make_result<T>(q.shape(), std::move(o), {q.node(), k.node(), v.node()});
    if (out->requires_grad) {
        out->backward = [s, probs](Node<T>& self) {
            auto& pq = *self.parents[0];
            auto& pk = *self.parents[1];
            auto& pv = *self.parents[2];
            // The kernel writes all three; scratch absorbs the ones not needed.
            std::vector<T> scratch_q, scratch_k, scratch_v;
            auto pick = [](Node<T>& p, std::vector<T>& scratch) -> std::span<T> {
                if (p.requires_grad) return p.ensure_grad();
                scratch.assign(p.value.size(), T(0));
                return scratch;
            };
            kn::attention_backward<T>(pq.value, pk.value, pv.value, *probs, self.grad,
                                      pick(pq, scratch_q), pick(pk, scratch_k), pick(pv, scratch_v), s);
        };
    }
    return Tensor<T>(out);
}

template <typename T>
NllTotal nll_total(const Tensor<T>& logits, std::span<const TokenId> targets, TokenId pad_id) {
    const std::size_t vocab = logits.shape().back();
    if (logits.numel() / vocab != targets.size())
        throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                             shape_str(logits.shape()));
    NllTotal total;
    for (std::size_t r = 0; r < targets.size(); ++r) {
        if (targets[r] == pad_id) continue;
        if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab)
            throw std::out_of_range("cross_entropy: target id " + std::to_string(targets[r]) +
                                    " outside vocabulary of " + std::to_string(vocab));
        const T* row = logits.data().data() + r * vocab;
        const T mx = *std::max_element(row, row + vocab);
        T z = 0;
        for (std::size_t j = 0; j < vocab; ++j) z += std::exp(row[j] - mx);
        total.sum += static_cast<double>(mx + std::log(z) - row[targets[r]]);
        ++total.count;
    }
    return total;
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const TokenId> targets, TokenId pad_id) {
    const NllTotal nll = nll_total(logits, targets, pad_id);
    if (nll.count == 0) throw std::domain_error("cross_entropy: every target is padding");
    const T mean = static_cast<T>(nll.sum / static_cast<double>(nll.count));
    auto out = make_result<T>({}, {mean}, {logits.node()});
    if (out->requires_grad) {
        out->backward = [tg = std::vector<TokenId>(targets.begin(), targets.end()), pad_id,
                         count = nll.count](Node<T>& self) {
            auto& p = *self.parents[0];
            auto g = p.ensure_grad();
            const std::size_t vocab = p.shape.back();
            const T coef = self.grad[0] / T(count);
            for (std::size_t r = 0; r < tg.size(); ++r) {
                if (tg[r] == pad_id) continue;
                const T* row = p.value.data() + r * vocab;
                const T mx = *std::max_element(row, row + vocab);
                T z = 0;
                for (std::size_t j = 0; j < vocab; ++j) z += std::exp(row[j] - mx);
                for (std::size_t j = 0; j < vocab; ++j) g[r * vocab + j] += coef * std::exp(row[j] - mx) / z;
                g[r * vocab + tg[r]] -= coef;
            }
        };
    }
    return Tensor<T>(out);
}

#define ENCBRIDGE_INSTANTIATE(T)                                                                       \
    template class Tensor<T>;                                                                          \
    template class Graph<T>;                                                                           \
    template class GraphScope<T>;                                                                      \
    template void backward<T>(const Tensor<T>&);                                                       \
    template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                  \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                     \
    template Tensor<T> add_bias<T>(const Tensor<T>&, const Tensor<T>&);                                \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                     \
    template Tensor<T> scale<T>(const Tensor<T>&, T);                                                  \
    template Tensor<T> relu<T>(const Tensor<T>&);                                                      \
    template Tensor<T> sum<T>(const Tensor<T>&);                                                       \
    template Tensor<T> softmax<T>(const Tensor<T>&, std::size_t);                                      \
    template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);         \
    template Tensor<T> embedding<T>(const Tensor<T>&, std::span<const TokenId>, Shape);                \
    template Tensor<T> concat_last<T>(const std::vector<Tensor<T>>&);                                  \
    template Tensor<T> attention<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, \
                                    std::span<const std::uint8_t>, bool);                              \
    template NllTotal nll_total<T>(const Tensor<T>&, std::span<const TokenId>, TokenId);               \
    template Tensor<T> cross_entropy<T>(const Tensor<T>&, std::span<const TokenId>, TokenId);

ENCBRIDGE_INSTANTIATE(float)
ENCBRIDGE_INSTANTIATE(double)

}  // namespace encbridge
