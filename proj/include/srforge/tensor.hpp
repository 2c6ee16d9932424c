#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "srforge/common.hpp"

namespace srforge::nn {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_size(const Shape& s) {
    std::int64_t n = 1;
    for (const auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + ")";
}

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One value in the recorded operation graph. Leaves are created by
/// Tensor::from_data / zeros; interior nodes carry a backward function that
/// scatters this node's gradient into its parents.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

/// Value-semantics handle over a graph node. Copies alias the same node.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->value.assign(std::size_t(shape_size(shape)), 0.0);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false) {
        require(std::int64_t(data.size()) == shape_size(shape), "tensor",
                "data length does not match shape " + shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor scalar(double v, bool requires_grad = false) {
        return from_data({1}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t size() const { return std::int64_t(node_->value.size()); }
    std::int64_t dim(int i) const { return node_->shape[std::size_t(i)]; }
    int rank() const { return int(node_->shape.size()); }

    std::vector<double>& data() { return node_->value; }
    const std::vector<double>& data() const { return node_->value; }
    std::vector<double>& grad() { node_->ensure_grad(); return node_->grad; }
    const std::vector<double>& grad() const { return node_->grad; }
    bool requires_grad() const { return node_->requires_grad; }

    double item() const {
        require(size() == 1, "tensor", "item() on non-scalar tensor");
        return node_->value[0];
    }

    NodePtr node() const { return node_; }

    void set_requires_grad(bool value) { node_->requires_grad = value; }

    void zero_grad() { if (node_) node_->grad.assign(node_->value.size(), 0.0); }

    /// Detached copy of the value (a fresh leaf, no graph history).
    Tensor detach(bool requires_grad = false) const {
        return from_data(node_->shape, node_->value, requires_grad);
    }

    /// Reverse-mode sweep from a scalar output. Gradients accumulate
    /// additively into every reachable node with requires_grad.
    void backward() const {
        require(size() == 1, "tensor", "backward() requires a scalar output");
        require(node_->requires_grad, "tensor", "backward() on a graph with no gradients");

        // Topological order by iterative post-order DFS over parents.
        std::vector<Node*> order;
        std::unordered_set<Node*> seen;
        std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, next] = stack.back();
            if (next < n->parents.size()) {
                Node* p = n->parents[next++].get();
                if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
        for (Node* n : order) n->ensure_grad();
        node_->grad[0] += 1.0;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            if (n->backward_fn) n->backward_fn(*n);
        }
    }

private:
    NodePtr node_;
};

/// Record an op result. The backward function is dropped when no input needs
/// gradients, so inference runs graph-free.
inline Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                      std::function<void(Node&)> backward) {
    bool needs_grad = false;
    for (const auto& t : inputs) needs_grad = needs_grad || t.requires_grad();
    Tensor out = Tensor::from_data(std::move(shape), std::move(value), needs_grad);
    if (needs_grad) {
        out.node()->parents.reserve(inputs.size());
        for (const auto& t : inputs) out.node()->parents.push_back(t.node());
        out.node()->backward_fn = std::move(backward);
    }
    return out;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    require(a.shape() == b.shape(), "tensor",
            std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
}

// ---- elementwise arithmetic ----

inline Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    std::vector<double> v(a.data());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += b.data()[i];
    return make_op(a.shape(), std::move(v), {a, b}, [](Node& n) {
        for (int k = 0; k < 2; ++k) {
            Node& p = *n.parents[std::size_t(k)];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    std::vector<double> v(a.data());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= b.data()[i];
    return make_op(a.shape(), std::move(v), {a, b}, [](Node& n) {
        Node& pa = *n.parents[0];
        Node& pb = *n.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] -= n.grad[i];
        }
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    std::vector<double> v(a.data());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] *= b.data()[i];
    return make_op(a.shape(), std::move(v), {a, b}, [](Node& n) {
        Node& pa = *n.parents[0];
        Node& pb = *n.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] += n.grad[i] * pa.value[i];
        }
    });
}

inline Tensor scale(const Tensor& a, double s) {
    std::vector<double> v(a.data());
    for (double& x : v) x *= s;
    return make_op(a.shape(), std::move(v), {a}, [s](Node& n) {
        Node& p = *n.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += s * n.grad[i];
    });
}

inline Tensor add_scalar(const Tensor& a, double s) {
    std::vector<double> v(a.data());
    for (double& x : v) x += s;
    return make_op(a.shape(), std::move(v), {a}, [](Node& n) {
        Node& p = *n.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
    });
}

/// a - s, for a scalar (1-element) tensor s broadcast over a.
inline Tensor sub_broadcast(const Tensor& a, const Tensor& s) {
    require(s.size() == 1, "tensor", "sub_broadcast expects a scalar second operand");
    std::vector<double> v(a.data());
    const double sv = s.data()[0];
    for (double& x : v) x -= sv;
    return make_op(a.shape(), std::move(v), {a, s}, [](Node& n) {
        Node& pa = *n.parents[0];
        Node& ps = *n.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i];
        }
        if (ps.requires_grad) {
            ps.ensure_grad();
            double sum = 0.0;
            for (const double g : n.grad) sum += g;
            ps.grad[0] -= sum;
        }
    });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

// ---- elementwise nonlinearities ----

inline Tensor abs(const Tensor& a) {
    std::vector<double> v(a.data());
    for (double& x : v) x = std::abs(x);
    return make_op(a.shape(), std::move(v), {a}, [](Node& n) {
        Node& p = *n.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            const double x = p.value[i];
            p.grad[i] += n.grad[i] * (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0));
        }
    });
}

inline double softplus_value(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

inline double sigmoid_value(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline Tensor softplus(const Tensor& a) {
    std::vector<double> v(a.data());
    for (double& x : v) x = softplus_value(x);
    return make_op(a.shape(), std::move(v), {a}, [](Node& n) {
        Node& p = *n.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i)
            p.grad[i] += n.grad[i] * sigmoid_value(p.value[i]);
    });
}

inline Tensor sigmoid(const Tensor& a) {
    std::vector<double> v(a.data());
    for (double& x : v) x = sigmoid_value(x);
    return make_op(a.shape(), std::move(v), {a}, [](Node& n) {
        Node& p = *n.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            const double s = n.value[i];
            p.grad[i] += n.grad[i] * s * (1.0 - s);
        }
    });
}

// ---- reductions ----

inline Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (const double x : a.data()) s += x;
    return make_op({1}, {s}, {a}, [](Node& n) {
        Node& p = *n.parents[0];
        p.ensure_grad();
        const double g = n.grad[0];
        for (double& pg : p.grad) pg += g;
    });
}

inline Tensor mean_all(const Tensor& a) {
    const double inv_n = 1.0 / double(a.size());
    double s = 0.0;
    for (const double x : a.data()) s += x;
    return make_op({1}, {s * inv_n}, {a}, [inv_n](Node& n) {
        Node& p = *n.parents[0];
        p.ensure_grad();
        const double g = n.grad[0] * inv_n;
        for (double& pg : p.grad) pg += g;
    });
}

// ---- shape ops ----

inline Tensor reshape(const Tensor& a, Shape shape) {
    require(shape_size(shape) == a.size(), "tensor",
            "reshape to incompatible size " + shape_str(shape));
    return make_op(std::move(shape), a.data(), {a}, [](Node& n) {
        Node& p = *n.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
    });
}

/// Concatenate NCHW tensors along the channel axis.
inline Tensor concat_channels(const std::vector<Tensor>& parts) {
    require(!parts.empty(), "tensor", "concat of zero tensors");
    const auto& first = parts.front().shape();
    require(first.size() == 4, "tensor", "concat_channels expects NCHW tensors");
    std::int64_t channels = 0;
    for (const auto& p : parts) {
        require(p.rank() == 4 && p.dim(0) == first[0] && p.dim(2) == first[2] &&
                    p.dim(3) == first[3],
                "tensor", "concat_channels: incompatible shapes");
        channels += p.dim(1);
    }
    const std::int64_t batch = first[0], h = first[2], w = first[3], hw = h * w;
    Shape out_shape{batch, channels, h, w};
    std::vector<double> v(std::size_t(shape_size(out_shape)));
    std::vector<std::int64_t> offsets; // channel offset per part
    std::int64_t coff = 0;
    for (const auto& p : parts) {
        offsets.push_back(coff);
        const std::int64_t pc = p.dim(1);
        for (std::int64_t n = 0; n < batch; ++n) {
            const double* src = p.data().data() + n * pc * hw;
            double* dst = v.data() + (n * channels + coff) * hw;
            std::copy(src, src + pc * hw, dst);
        }
        coff += pc;
    }
    return make_op(std::move(out_shape), std::move(v), parts,
                   [batch, channels, hw, offsets](Node& n) {
                       for (std::size_t k = 0; k < n.parents.size(); ++k) {
                           Node& p = *n.parents[k];
                           if (!p.requires_grad) continue;
                           p.ensure_grad();
                           const std::int64_t pc = p.shape[1];
                           for (std::int64_t b = 0; b < batch; ++b) {
                               const double* g = n.grad.data() + (b * channels + offsets[k]) * hw;
                               double* dst = p.grad.data() + b * pc * hw;
                               for (std::int64_t i = 0; i < pc * hw; ++i) dst[i] += g[i];
                           }
                       }
                   });
}

/// Inference-only clamp into [lo, hi]; detaches from the graph, so no
/// gradient flows through it.
inline Tensor clamp_value(const Tensor& a, double lo, double hi) {
    std::vector<double> v(a.data());
    for (double& x : v) x = std::clamp(x, lo, hi);
    return Tensor::from_data(a.shape(), std::move(v));
}

inline bool all_finite(const std::vector<double>& v) {
    for (const double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

} // namespace srforge::nn
