#pragma once

#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "ganscreen/ops.hpp"
#include "ganscreen/tensor.hpp"

namespace ganscreen {

namespace detail {

// Post-order over the node DAG reachable from root; reversing the result
// guarantees every node is visited before its parents.
inline std::vector<std::shared_ptr<Node>> topo_from(const Tensor& root) {
    std::vector<std::shared_ptr<Node>> order;
    if (!root.grad_fn()) return order;
    std::unordered_set<Node*> seen;
    struct Frame {
        std::shared_ptr<Node> node;
        std::size_t next = 0;
    };
    std::vector<Frame> stack;
    stack.push_back({root.grad_fn()});
    seen.insert(root.grad_fn().get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.node->parents.size()) {
            const auto& p = f.node->parents[f.next++];
            if (p.defined() && p.grad_fn() && !seen.count(p.grad_fn().get())) {
                seen.insert(p.grad_fn().get());
                stack.push_back({p.grad_fn()});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }
    return order;
}

struct BackwardResult {
    std::unordered_map<Node*, Tensor> node_grads;
    std::unordered_map<TensorImpl*, Tensor> leaf_grads;
};

// Shared engine behind backward() and grad(). When `create_graph` is set the
// VJPs are recorded (differentiable gradients) and the graph is retained;
// otherwise each visited node is consumed.
inline BackwardResult run_backward(const Tensor& root, bool create_graph) {
    if (root.numel() != 1)
        throw std::invalid_argument("backward: expected a scalar, got " + shape_str(root.shape()));
    BackwardResult res;
    Tensor seed = Tensor::ones(root.shape());

    auto accumulate = [create_graph](Tensor& slot, const Tensor& contrib) {
        if (!slot.defined()) {
            slot = contrib;
            return;
        }
        if (create_graph) {
            slot = add(slot, contrib);
        } else {
            NoGradGuard ng;
            slot = add(slot, contrib);
        }
    };

    if (!root.grad_fn()) {
        if (root.requires_grad()) res.leaf_grads[root.impl().get()] = seed;
        return res;
    }
    res.node_grads[root.grad_fn().get()] = seed;

    auto order = topo_from(root);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = it->get();
        auto gi = res.node_grads.find(node);
        if (gi == res.node_grads.end()) continue;
        if (node->consumed)
            throw std::runtime_error(std::string("backward: graph already consumed at op '") + node->op + "'");
        std::vector<Tensor> parent_grads;
        if (create_graph) {
            parent_grads = node->vjp(gi->second);
        } else {
            NoGradGuard ng;
            parent_grads = node->vjp(gi->second);
            node->consumed = true;
        }
        for (std::size_t i = 0; i < node->parents.size(); ++i) {
            const Tensor& p = node->parents[i];
            if (!is_tracked(p)) continue;
            if (i >= parent_grads.size() || !parent_grads[i].defined()) continue;
            if (p.grad_fn())
                accumulate(res.node_grads[p.grad_fn().get()], parent_grads[i]);
            else
                accumulate(res.leaf_grads[p.impl().get()], parent_grads[i]);
        }
    }
    return res;
}

} // namespace detail

// Accumulates d(loss)/d(leaf) into the .grad buffer of every requires_grad
// leaf reachable from `loss`. The traversed graph is consumed.
inline void backward(const Tensor& loss) {
    auto res = detail::run_backward(loss, /*create_graph=*/false);
    for (auto& [impl, g] : res.leaf_grads) {
        if (!impl->grad) {
            auto gbuf = std::make_shared<TensorImpl>();
            gbuf->shape = impl->shape;
            gbuf->data.assign(impl->data.size(), 0.0);
            impl->grad = std::move(gbuf);
        }
        auto src = g.data();
        auto& dst = impl->grad->data;
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
}

// Gradients of a scalar `output` with respect to `inputs` (leaves or
// intermediates). With create_graph the returned tensors are themselves
// differentiable and the graph is retained for a later backward().
inline std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& inputs, bool create_graph = false) {
    auto res = detail::run_backward(output, create_graph);
    std::vector<Tensor> out;
    out.reserve(inputs.size());
    for (const auto& in : inputs) {
        Tensor g;
        if (in.grad_fn()) {
            auto it = res.node_grads.find(in.grad_fn().get());
            if (it != res.node_grads.end()) g = it->second;
        } else {
            auto it = res.leaf_grads.find(in.impl().get());
            if (it != res.leaf_grads.end()) g = it->second;
        }
        if (!g.defined()) g = Tensor::zeros(in.shape());
        out.push_back(std::move(g));
    }
    return out;
}

// --- finite-difference gradient checking ----------------------------------

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::int64_t worst_coord = -1;
    std::vector<std::int64_t> excluded_kinks;   // coordinates skipped as nondifferentiable
    std::vector<std::int64_t> nonfinite_coords; // coordinates where f blew up
    bool ok(double tol) const { return nonfinite_coords.empty() && max_rel_err < tol; }
};

// Central-difference check of d(f)/dx against reverse-mode gradients.
// f must be a scalar-valued function of one tensor. Coordinates where the
// one-sided slopes disagree badly (a kink, e.g. a rectifier at 0) are
// excluded and reported instead of failing the check.
template <typename F>
GradCheckResult grad_check(F&& f, const Tensor& x0, double eps = 1e-5) {
    GradCheckResult res;

    Tensor x = x0.detach();
    x.set_requires_grad(true);
    Tensor y = f(x);
    if (y.numel() != 1) throw std::invalid_argument("grad_check: f must be scalar-valued");
    backward(y);
    Tensor analytic = x.grad().defined() ? x.grad().detach() : Tensor::zeros(x.shape());

    // The probe is untracked, so plain ops record nothing; f may still build
    // internal graphs of its own (e.g. penalties that differentiate inside).
    Tensor probe = x0.detach();
    auto eval = [&](void) -> double { return f(probe).value(); };
    const double f0 = eval();
    if (!std::isfinite(f0)) {
        res.nonfinite_coords.push_back(-1);
        return res;
    }
    auto pv = probe.data();
    auto av = analytic.data();
    for (std::int64_t i = 0; i < probe.numel(); ++i) {
        const double saved = pv[static_cast<std::size_t>(i)];
        pv[static_cast<std::size_t>(i)] = saved + eps;
        const double fp = eval();
        pv[static_cast<std::size_t>(i)] = saved - eps;
        const double fm = eval();
        pv[static_cast<std::size_t>(i)] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            res.nonfinite_coords.push_back(i);
            continue;
        }
        const double dplus = (fp - f0) / eps;
        const double dminus = (f0 - fm) / eps;
        // one-sided slopes disagreeing flags a kink between x-eps and x+eps
        if (std::abs(dplus - dminus) > 0.05 * std::max({1.0, std::abs(dplus), std::abs(dminus)})) {
            res.excluded_kinks.push_back(i);
            continue;
        }
        const double central = 0.5 * (dplus + dminus);
        const double a = av[static_cast<std::size_t>(i)];
        const double rel = std::abs(a - central) / std::max(1.0, std::abs(a));
        if (rel > res.max_rel_err) {
            res.max_rel_err = rel;
            res.worst_coord = i;
        }
    }
    return res;
}

} // namespace ganscreen
