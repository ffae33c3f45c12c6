#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ganscreen/rng.hpp"

namespace ganscreen {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

struct Node;

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::shared_ptr<TensorImpl> grad;   // filled in by backward() on leaves
    std::shared_ptr<Node> grad_fn;      // null for leaves
};

// Reverse-mode autodiff is recorded per-tensor: every op output carries a Node
// holding its parents and a vector-Jacobian product. VJPs are themselves
// written in terms of ops, so recording them (grad mode on) yields a
// differentiable backward pass; that is what the double-backward regularizers
// rely on.
class Tensor {
public:
    Tensor() = default;

    static Tensor from_data(Shape shape, std::vector<double> data) {
        if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
            throw std::invalid_argument("Tensor: shape " + shape_str(shape) + " does not match data length " +
                                        std::to_string(data.size()));
        Tensor t;
        t.impl_ = std::make_shared<TensorImpl>();
        t.impl_->shape = std::move(shape);
        t.impl_->data = std::move(data);
        return t;
    }

    static Tensor zeros(Shape shape) {
        auto n = shape_numel(shape);
        return from_data(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0));
    }

    static Tensor full(Shape shape, double v) {
        auto n = shape_numel(shape);
        return from_data(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), v));
    }

    static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

    static Tensor scalar(double v) { return from_data({}, {v}); }

    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0) {
        auto n = shape_numel(shape);
        std::vector<double> d(static_cast<std::size_t>(n));
        for (auto& x : d) x = rng.normal() * stddev;
        return from_data(std::move(shape), std::move(d));
    }

    bool defined() const { return impl_ != nullptr; }

    const Shape& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return shape_numel(impl_->shape); }

    std::span<double> data() { return impl_->data; }
    std::span<const double> data() const { return impl_->data; }

    double value() const {
        if (numel() != 1)
            throw std::invalid_argument("Tensor::value: tensor " + shape_str(shape()) + " is not a scalar");
        return impl_->data[0];
    }

    bool requires_grad() const { return impl_ && impl_->requires_grad; }

    Tensor& set_requires_grad(bool b) {
        if (impl_->grad_fn)
            throw std::invalid_argument("set_requires_grad: only leaf tensors can be toggled");
        impl_->requires_grad = b;
        return *this;
    }

    const std::shared_ptr<Node>& grad_fn() const { return impl_->grad_fn; }
    bool is_leaf() const { return !impl_->grad_fn; }

    // Accumulated gradient; undefined until backward() has touched this leaf.
    Tensor grad() const {
        Tensor g;
        g.impl_ = impl_->grad;
        return g;
    }

    void zero_grad() { impl_->grad.reset(); }

    void accumulate_grad(const Tensor& contrib) {
        if (!impl_->grad) {
            auto g = std::make_shared<TensorImpl>();
            g->shape = impl_->shape;
            g->data.assign(impl_->data.size(), 0.0);
            impl_->grad = std::move(g);
        }
        auto& dst = impl_->grad->data;
        auto src = contrib.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }

    // Value copy with no graph attachment.
    Tensor detach() const {
        return from_data(impl_->shape, impl_->data);
    }

    Tensor clone() const { return detach(); }

    std::shared_ptr<TensorImpl>& impl() { return impl_; }
    const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

struct Node {
    const char* op = "";
    std::vector<Tensor> parents;
    // Maps the upstream gradient to one gradient per parent; an undefined
    // Tensor marks a parent that needs no gradient.
    std::function<std::vector<Tensor>(const Tensor&)> vjp;
    bool consumed = false;
};

namespace detail {
inline thread_local bool g_grad_enabled = true;
}

inline bool grad_enabled() { return detail::g_grad_enabled; }

struct NoGradGuard {
    NoGradGuard() : prev_(detail::g_grad_enabled) { detail::g_grad_enabled = false; }
    ~NoGradGuard() { detail::g_grad_enabled = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

inline bool is_tracked(const Tensor& t) { return t.defined() && t.requires_grad(); }

// Attach a grad_fn to `out` when grad mode is on and any parent is tracked.
inline void attach_node(Tensor& out, const char* op, std::vector<Tensor> parents,
                        std::function<std::vector<Tensor>(const Tensor&)> vjp) {
    if (!grad_enabled()) return;
    bool any = false;
    for (const auto& p : parents)
        if (is_tracked(p)) { any = true; break; }
    if (!any) return;
    auto n = std::make_shared<Node>();
    n->op = op;
    n->parents = std::move(parents);
    n->vjp = std::move(vjp);
    out.impl()->grad_fn = std::move(n);
    out.impl()->requires_grad = true;
}

} // namespace ganscreen
