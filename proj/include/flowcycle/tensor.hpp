#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "flowcycle/errors.hpp"
#include "flowcycle/rng.hpp"

namespace flowcycle {

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One record on the implicit tape. Ops append a node only when some
// input requires grad; otherwise the result is a free-standing value
// and the chain costs nothing beyond the arithmetic.
struct Node {
    std::vector<std::size_t> shape;
    std::vector<double> values;
    bool requires_grad = false;
    std::vector<double> grad;              // filled by backward()
    std::vector<NodePtr> parents;          // grad-requiring inputs only
    std::function<void(Node&)> backprop;   // accumulates into parents' grad

    std::size_t size() const { return values.size(); }
};

inline std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

}  // namespace detail

// Dense 64-bit float tensor with value semantics over a shared node.
// Copies alias the same storage; ops produce fresh nodes.
class Tensor {
public:
    Tensor() : n_(std::make_shared<detail::Node>()) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> values, bool requires_grad = false)
        : n_(std::make_shared<detail::Node>()) {
        if (shape.empty()) throw std::invalid_argument("Tensor: empty shape");
        for (std::size_t d : shape)
            if (d == 0) throw std::invalid_argument("Tensor: zero dimension");
        if (detail::shape_product(shape) != values.size())
            throw std::invalid_argument("Tensor: shape/value size mismatch");
        n_->shape = std::move(shape);
        n_->values = std::move(values);
        n_->requires_grad = requires_grad;
    }

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
        std::vector<double> v(detail::shape_product(shape), 0.0);
        return Tensor(std::move(shape), std::move(v), requires_grad);
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    const std::vector<std::size_t>& shape() const { return n_->shape; }
    std::size_t size() const { return n_->size(); }
    const std::vector<double>& values() const { return n_->values; }
    std::vector<double>& values() { return n_->values; }
    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool b) { n_->requires_grad = b; }

    double item() const {
        if (size() != 1) throw std::invalid_argument("Tensor::item: not a scalar");
        return n_->values[0];
    }

    bool has_grad() const { return n_->grad.size() == size(); }

    // Gradient from the most recent backward() this tensor participated
    // in; zeros when it did not participate.
    const std::vector<double>& grad() const {
        if (!has_grad()) n_->grad.assign(size(), 0.0);
        return n_->grad;
    }

    bool all_finite() const {
        for (double v : n_->values)
            if (!std::isfinite(v)) return false;
        return true;
    }

    // Value copy cut off from any graph.
    Tensor detach() const { return Tensor(n_->shape, n_->values, false); }

    detail::Node* node() const { return n_.get(); }
    const detail::NodePtr& node_ptr() const { return n_; }

private:
    detail::NodePtr n_;
};

inline Tensor rng_normal(RngStream& stream, std::vector<std::size_t> shape) {
    if (shape.empty()) throw std::invalid_argument("rng_normal: empty shape");
    std::vector<double> v(detail::shape_product(shape));
    for (double& x : v) x = stream.next_normal();
    return Tensor(std::move(shape), std::move(v));
}

namespace detail {

inline Tensor make_tracked(std::vector<std::size_t> shape, std::vector<double> values,
                           std::vector<NodePtr> parents, std::function<void(Node&)> backprop) {
    Tensor out(std::move(shape), std::move(values), true);
    out.node()->parents = std::move(parents);
    out.node()->backprop = std::move(backprop);
    return out;
}

inline std::vector<NodePtr> grad_parents(std::initializer_list<const Tensor*> ts) {
    std::vector<NodePtr> out;
    for (const Tensor* t : ts)
        if (t->requires_grad()) out.push_back(t->node_ptr());
    return out;
}

inline void accumulate(Node& dst, const double* g, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst.grad[i] += g[i];
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise / linear-algebra ops. Each records its pullback on the tape
// when any input requires grad.
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] + b.values()[i];
    if (!a.requires_grad() && !b.requires_grad()) return Tensor(a.shape(), std::move(v));
    auto an = a.node_ptr(), bn = b.node_ptr();
    return detail::make_tracked(a.shape(), std::move(v), detail::grad_parents({&a, &b}),
        [an, bn](detail::Node& out) {
            if (an->requires_grad) detail::accumulate(*an, out.grad.data(), out.size());
            if (bn->requires_grad) detail::accumulate(*bn, out.grad.data(), out.size());
        });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] - b.values()[i];
    if (!a.requires_grad() && !b.requires_grad()) return Tensor(a.shape(), std::move(v));
    auto an = a.node_ptr(), bn = b.node_ptr();
    return detail::make_tracked(a.shape(), std::move(v), detail::grad_parents({&a, &b}),
        [an, bn](detail::Node& out) {
            if (an->requires_grad) detail::accumulate(*an, out.grad.data(), out.size());
            if (bn->requires_grad)
                for (std::size_t i = 0; i < out.size(); ++i) bn->grad[i] -= out.grad[i];
        });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * b.values()[i];
    if (!a.requires_grad() && !b.requires_grad()) return Tensor(a.shape(), std::move(v));
    auto an = a.node_ptr(), bn = b.node_ptr();
    return detail::make_tracked(a.shape(), std::move(v), detail::grad_parents({&a, &b}),
        [an, bn](detail::Node& out) {
            if (an->requires_grad)
                for (std::size_t i = 0; i < out.size(); ++i) an->grad[i] += out.grad[i] * bn->values[i];
            if (bn->requires_grad)
                for (std::size_t i = 0; i < out.size(); ++i) bn->grad[i] += out.grad[i] * an->values[i];
        });
}

inline Tensor scale(const Tensor& a, double s) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * s;
    if (!a.requires_grad()) return Tensor(a.shape(), std::move(v));
    auto an = a.node_ptr();
    return detail::make_tracked(a.shape(), std::move(v), {an},
        [an, s](detail::Node& out) {
            for (std::size_t i = 0; i < out.size(); ++i) an->grad[i] += out.grad[i] * s;
        });
}

inline Tensor tanh_t(const Tensor& a) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(a.values()[i]);
    if (!a.requires_grad()) return Tensor(a.shape(), std::move(v));
    auto an = a.node_ptr();
    return detail::make_tracked(a.shape(), std::move(v), {an},
        [an](detail::Node& out) {
            for (std::size_t i = 0; i < out.size(); ++i)
                an->grad[i] += out.grad[i] * (1.0 - out.values[i] * out.values[i]);
        });
}

// y = W x + b with W of shape [rows, cols], x of shape [cols].
inline Tensor linear(const Tensor& w, const Tensor& x, const Tensor& b) {
    if (w.shape().size() != 2) throw std::invalid_argument("linear: W must be 2-D");
    const std::size_t rows = w.shape()[0], cols = w.shape()[1];
    if (x.size() != cols || b.size() != rows)
        throw std::invalid_argument("linear: dimension mismatch");
    std::vector<double> v(rows);
    const double* wp = w.values().data();
    const double* xp = x.values().data();
    for (std::size_t r = 0; r < rows; ++r) {
        double acc = b.values()[r];
        const double* wr = wp + r * cols;
        for (std::size_t c = 0; c < cols; ++c) acc += wr[c] * xp[c];
        v[r] = acc;
    }
    if (!w.requires_grad() && !x.requires_grad() && !b.requires_grad())
        return Tensor({rows}, std::move(v));
    auto wn = w.node_ptr(), xn = x.node_ptr(), bn = b.node_ptr();
    return detail::make_tracked({rows}, std::move(v), detail::grad_parents({&w, &x, &b}),
        [wn, xn, bn, rows, cols](detail::Node& out) {
            const double* gy = out.grad.data();
            if (xn->requires_grad) {
                double* gx = xn->grad.data();
                const double* wp2 = wn->values.data();
                for (std::size_t r = 0; r < rows; ++r) {
                    const double g = gy[r];
                    const double* wr = wp2 + r * cols;
                    for (std::size_t c = 0; c < cols; ++c) gx[c] += g * wr[c];
                }
            }
            if (wn->requires_grad) {
                double* gw = wn->grad.data();
                const double* xp2 = xn->values.data();
                for (std::size_t r = 0; r < rows; ++r) {
                    const double g = gy[r];
                    double* gr = gw + r * cols;
                    for (std::size_t c = 0; c < cols; ++c) gr[c] += g * xp2[c];
                }
            }
            if (bn->requires_grad) detail::accumulate(*bn, gy, rows);
        });
}

// Row idx of a [rows, cols] matrix; backward scatters into that row.
inline Tensor row(const Tensor& table, std::size_t idx) {
    if (table.shape().size() != 2) throw std::invalid_argument("row: table must be 2-D");
    const std::size_t rows = table.shape()[0], cols = table.shape()[1];
    if (idx >= rows) throw std::invalid_argument("row: index out of range");
    std::vector<double> v(table.values().begin() + idx * cols,
                          table.values().begin() + (idx + 1) * cols);
    if (!table.requires_grad()) return Tensor({cols}, std::move(v));
    auto tn = table.node_ptr();
    return detail::make_tracked({cols}, std::move(v), {tn},
        [tn, idx, cols](detail::Node& out) {
            double* g = tn->grad.data() + idx * cols;
            for (std::size_t i = 0; i < cols; ++i) g[i] += out.grad[i];
        });
}

inline Tensor concat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    std::size_t total = 0;
    bool tracked = false;
    for (const Tensor& p : parts) {
        total += p.size();
        tracked = tracked || p.requires_grad();
    }
    std::vector<double> v;
    v.reserve(total);
    for (const Tensor& p : parts) v.insert(v.end(), p.values().begin(), p.values().end());
    if (!tracked) return Tensor({total}, std::move(v));
    std::vector<detail::NodePtr> all, parents;
    for (const Tensor& p : parts) {
        all.push_back(p.node_ptr());
        if (p.requires_grad()) parents.push_back(p.node_ptr());
    }
    return detail::make_tracked({total}, std::move(v), std::move(parents),
        [all](detail::Node& out) {
            std::size_t off = 0;
            for (const auto& p : all) {
                if (p->requires_grad) detail::accumulate(*p, out.grad.data() + off, p->size());
                off += p->size();
            }
        });
}

inline Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.values()) acc += v;
    if (!a.requires_grad()) return Tensor::scalar(acc);
    auto an = a.node_ptr();
    return detail::make_tracked({1}, {acc}, {an},
        [an](detail::Node& out) {
            const double g = out.grad[0];
            for (std::size_t i = 0; i < an->size(); ++i) an->grad[i] += g;
        });
}

// Mean over all elements of (a - b)^2.
inline Tensor mse(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mse");
    const std::size_t n = a.size();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a.values()[i] - b.values()[i];
        acc += d * d;
    }
    acc /= static_cast<double>(n);
    if (!a.requires_grad() && !b.requires_grad()) return Tensor::scalar(acc);
    auto an = a.node_ptr(), bn = b.node_ptr();
    return detail::make_tracked({1}, {acc}, detail::grad_parents({&a, &b}),
        [an, bn, n](detail::Node& out) {
            const double g = out.grad[0] * 2.0 / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double d = g * (an->values[i] - bn->values[i]);
                if (an->requires_grad) an->grad[i] += d;
                if (bn->requires_grad) bn->grad[i] -= d;
            }
        });
}

// ---------------------------------------------------------------------------
// Reverse-mode sweep. Visits every node of the DAG rooted at `loss`
// exactly once, in reverse topological order.
// ---------------------------------------------------------------------------

inline void backward(const Tensor& loss) {
    if (loss.size() != 1) throw std::invalid_argument("backward: root must be scalar");

    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(loss.node(), 0);
    seen.insert(loss.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* p = node->parents[next++].get();
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (detail::Node* n : order) n->grad.assign(n->size(), 0.0);
    loss.node()->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop) (*it)->backprop(**it);
}

// Max over coordinates of |autodiff - central difference| relative error
// for a scalar-valued graph builder f evaluated at x.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double h) {
    if (h <= 0.0) throw std::invalid_argument("grad_check: h must be positive");
    Tensor var(x.shape(), x.values(), true);
    Tensor loss = f(var);
    if (!loss.all_finite()) throw numeric_failure("grad_check: non-finite loss");
    backward(loss);
    std::vector<double> ad = var.grad();

    Tensor probe = x.detach();
    double max_rel = 0.0;
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double orig = probe.values()[i];
        probe.values()[i] = orig + h;
        const double up = f(probe).item();
        probe.values()[i] = orig - h;
        const double down = f(probe).item();
        probe.values()[i] = orig;
        if (!std::isfinite(up) || !std::isfinite(down))
            throw numeric_failure("grad_check: non-finite probe evaluation");
        const double fd = (up - down) / (2.0 * h);
        const double rel = std::abs(ad[i] - fd) / (std::abs(fd) + 1e-8);
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace flowcycle
