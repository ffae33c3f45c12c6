#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ganscreen/autograd.hpp"
#include "ganscreen/ops.hpp"
#include "ganscreen/rng.hpp"

// Seeded finite-difference verification of every differentiable primitive.
// Each case builds a random instance, scalarizes the op output with a random
// cotangent and compares reverse-mode gradients against central differences.

namespace ganscreen {

struct GradSuiteRow {
    std::string op;
    int cases = 0;
    int excluded_kinks = 0;
    double max_rel_err = 0.0;
};

struct GradSuiteReport {
    std::vector<GradSuiteRow> rows;
    int total_cases = 0;
    double worst = 0.0;
    bool all_ok(double tol) const {
        for (const auto& r : rows)
            if (!(r.max_rel_err < tol)) return false;
        return true;
    }
};

namespace detail {

inline Tensor rand_shape_tensor(Rng& rng, int max_rank, double scale = 1.0) {
    int rank = 1 + static_cast<int>(rng.below(static_cast<std::size_t>(max_rank)));
    Shape s;
    for (int i = 0; i < rank; ++i) s.push_back(1 + static_cast<int>(rng.below(4)));
    return Tensor::randn(s, rng, scale);
}

// Random strictly-positive tensor bounded away from 0.
inline Tensor rand_positive(Rng& rng, const Shape& s) {
    Tensor t = Tensor::zeros(s);
    for (auto& v : t.data()) v = rng.uniform(0.5, 2.0);
    return t;
}

// Random tensor bounded away from 0 (either sign).
inline Tensor rand_nonzero(Rng& rng, const Shape& s) {
    Tensor t = Tensor::zeros(s);
    for (auto& v : t.data()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.3, 2.0);
    return t;
}

inline Tensor cotangent_like(Rng& rng, const Tensor& t) { return Tensor::randn(t.shape(), rng); }

} // namespace detail

// One finite-difference case: differentiate sum(f(x) * cotangent) wrt x.
template <typename F>
inline void gradsuite_case(GradSuiteRow& row, Rng& rng, const Tensor& x0, F f, double eps = 1e-5) {
    Tensor cot;
    {
        NoGradGuard ng;
        cot = detail::cotangent_like(rng, f(x0));
    }
    auto res = grad_check([&](const Tensor& x) { return sum_all(mul(f(x), cot)); }, x0, eps);
    row.cases += 1;
    row.excluded_kinks += static_cast<int>(res.excluded_kinks.size());
    if (res.max_rel_err > row.max_rel_err) row.max_rel_err = res.max_rel_err;
}

inline GradSuiteReport run_op_gradient_suite(int cases_per_op = 5, std::uint64_t seed = 20240311) {
    GradSuiteReport rep;
    Rng rng(seed);

    auto run = [&](const std::string& name, auto make_case) {
        GradSuiteRow row;
        row.op = name;
        for (int c = 0; c < cases_per_op; ++c) make_case(row, rng);
        rep.rows.push_back(row);
        rep.total_cases += row.cases;
        rep.worst = std::max(rep.worst, row.max_rel_err);
    };

    using detail::rand_nonzero;
    using detail::rand_positive;
    using detail::rand_shape_tensor;

    run("add", [](GradSuiteRow& r, Rng& g) {
        Tensor a = Tensor::randn({2, 3, 4}, g), b = Tensor::randn({3, 1}, g);
        gradsuite_case(r, g, a, [&](const Tensor& x) { return add(x, b); });
        gradsuite_case(r, g, b, [&](const Tensor& x) { return add(a, x); });
    });
    run("sub", [](GradSuiteRow& r, Rng& g) {
        Tensor a = Tensor::randn({4, 2}, g), b = Tensor::randn({2}, g);
        gradsuite_case(r, g, a, [&](const Tensor& x) { return sub(x, b); });
        gradsuite_case(r, g, b, [&](const Tensor& x) { return sub(a, x); });
    });
    run("mul", [](GradSuiteRow& r, Rng& g) {
        Tensor a = Tensor::randn({2, 5}, g), b = Tensor::randn({2, 1}, g);
        gradsuite_case(r, g, a, [&](const Tensor& x) { return mul(x, b); });
        gradsuite_case(r, g, b, [&](const Tensor& x) { return mul(a, x); });
    });
    run("div", [](GradSuiteRow& r, Rng& g) {
        Tensor a = Tensor::randn({3, 4}, g), b = rand_nonzero(g, {3, 1});
        gradsuite_case(r, g, a, [&](const Tensor& x) { return div(x, b); });
        gradsuite_case(r, g, b, [&](const Tensor& x) { return div(a, x); });
    });
    run("neg", [](GradSuiteRow& r, Rng& g) {
        gradsuite_case(r, g, rand_shape_tensor(g, 3), [](const Tensor& x) { return neg(x); });
    });
    run("matmul", [](GradSuiteRow& r, Rng& g) {
        Tensor a = Tensor::randn({3, 4}, g), b = Tensor::randn({4, 2}, g);
        gradsuite_case(r, g, a, [&](const Tensor& x) { return matmul(x, b); });
        gradsuite_case(r, g, b, [&](const Tensor& x) { return matmul(a, x); });
    });
    run("transpose", [](GradSuiteRow& r, Rng& g) {
        gradsuite_case(r, g, Tensor::randn({3, 5}, g), [](const Tensor& x) { return transpose(x); });
    });
    run("transpose01", [](GradSuiteRow& r, Rng& g) {
        gradsuite_case(r, g, Tensor::randn({2, 3, 2, 2}, g), [](const Tensor& x) { return transpose01(x); });
    });
    run("flip_spatial", [](GradSuiteRow& r, Rng& g) {
        gradsuite_case(r, g, Tensor::randn({2, 2, 3, 3}, g), [](const Tensor& x) { return flip_spatial(x); });
    });
    run("reshape", [](GradSuiteRow& r, Rng& g) {
        gradsuite_case(r, g, Tensor::randn({2, 6}, g), [](const Tensor& x) { return reshape(x, {3, 4}); });
    });
    run("conv2d_1x1", [](GradSuiteRow& r, Rng& g) {
        Tensor x = Tensor::randn({2, 3, 4, 4}, g), k = Tensor::randn({2, 3, 1, 1}, g);
        gradsuite_case(r, g, x, [&](const Tensor& t) { return conv2d(t, k, 0); });
        gradsuite_case(r, g, k, [&](const Tensor& t) { return conv2d(x, t, 0); });
    });
    run("conv2d_3x3_same", [](GradSuiteRow& r, Rng& g) {
        Tensor x = Tensor::randn({2, 2, 5, 5}, g), k = Tensor::randn({3, 2, 3, 3}, g);
        gradsuite_case(r, g, x, [&](const Tensor& t) { return conv2d(t, k, 1); });
        gradsuite_case(r, g, k, [&](const Tensor& t) { return conv2d(x, t, 1); });
    });
    run("conv2d_3x3_valid", [](GradSuiteRow& r, Rng& g) {
        Tensor x = Tensor::randn({1, 2, 6, 6}, g), k = Tensor::randn({2, 2, 3, 3}, g);
        gradsuite_case(r, g, x, [&](const Tensor& t) { return conv2d(t, k, 0); });
        gradsuite_case(r, g, k, [&](const Tensor& t) { return conv2d(x, t, 0); });
    });
    run("leaky_relu", [](GradSuiteRow& r, Rng& g) {
        gradsuite_case(r, g, rand_nonzero(g, {3, 4}), [](const Tensor& x) { return leaky_relu(x, 0.2); });
    });
    run("softplus", [](GradSuiteRow& r, Rng& g) {
        gradsuite_case(r, g, rand_shape_tensor(g, 2, 2.0), [](const Tensor& x) { return softplus(x); });
    });
    run("sigmoid", [](GradSuiteRow& r, Rng& g) {
        gradsuite_case(r, g, rand_shape_tensor(g, 2, 2.0), [](const Tensor& x) { return sigmoid(x); });
    });
    run("sqrt", [](GradSuiteRow& r, Rng& g) {
        gradsuite_case(r, g, rand_positive(g, {4, 3}), [](const Tensor& x) { return sqrt(x); });
    });
    run("abs", [](GradSuiteRow& r, Rng& g) {
        gradsuite_case(r, g, rand_nonzero(g, {5}), [](const Tensor& x) { return abs(x); });
    });
    run("sum_all", [](GradSuiteRow& r, Rng& g) {
        gradsuite_case(r, g, rand_shape_tensor(g, 4), [](const Tensor& x) { return sum_all(x); });
    });
    run("sum_to", [](GradSuiteRow& r, Rng& g) {
        gradsuite_case(r, g, Tensor::randn({2, 3, 4}, g), [](const Tensor& x) { return sum_to(x, {3, 1}); });
    });
    run("broadcast_to", [](GradSuiteRow& r, Rng& g) {
        gradsuite_case(r, g, Tensor::randn({3, 1}, g), [](const Tensor& x) { return broadcast_to(x, {2, 3, 4}); });
    });
    run("up2x", [](GradSuiteRow& r, Rng& g) {
        gradsuite_case(r, g, Tensor::randn({1, 2, 3, 4}, g), [](const Tensor& x) { return up2x(x); });
    });
    run("up2x_adjoint", [](GradSuiteRow& r, Rng& g) {
        gradsuite_case(r, g, Tensor::randn({1, 2, 4, 6}, g), [](const Tensor& x) { return up2x_adjoint(x); });
    });
    run("down2x", [](GradSuiteRow& r, Rng& g) {
        gradsuite_case(r, g, Tensor::randn({1, 2, 4, 4}, g), [](const Tensor& x) { return down2x(x); });
    });
    run("down2x_adjoint", [](GradSuiteRow& r, Rng& g) {
        gradsuite_case(r, g, Tensor::randn({1, 2, 2, 3}, g), [](const Tensor& x) { return down2x_adjoint(x); });
    });
    run("concat0", [](GradSuiteRow& r, Rng& g) {
        Tensor a = Tensor::randn({2, 3}, g), b = Tensor::randn({1, 3}, g);
        gradsuite_case(r, g, a, [&](const Tensor& x) { return concat0({x, b}); });
        gradsuite_case(r, g, b, [&](const Tensor& x) { return concat0({a, x}); });
    });
    run("narrow0", [](GradSuiteRow& r, Rng& g) {
        gradsuite_case(r, g, Tensor::randn({4, 3}, g), [](const Tensor& x) { return narrow0(x, 1, 2); });
    });
    run("embed0", [](GradSuiteRow& r, Rng& g) {
        gradsuite_case(r, g, Tensor::randn({2, 3}, g), [](const Tensor& x) { return embed0(x, 1, 4); });
    });
    run("linear", [](GradSuiteRow& r, Rng& g) {
        Tensor x = Tensor::randn({3, 4}, g), w = Tensor::randn({2, 4}, g), b = Tensor::randn({2}, g);
        gradsuite_case(r, g, x, [&](const Tensor& t) { return linear(t, w, b); });
        gradsuite_case(r, g, w, [&](const Tensor& t) { return linear(x, t, b); });
        gradsuite_case(r, g, b, [&](const Tensor& t) { return linear(x, w, t); });
    });
    run("row_sumsq", [](GradSuiteRow& r, Rng& g) {
        gradsuite_case(r, g, Tensor::randn({3, 4}, g), [](const Tensor& x) { return row_sumsq(x); });
    });
    run("l2norm", [](GradSuiteRow& r, Rng& g) {
        gradsuite_case(r, g, rand_nonzero(g, {2, 3}), [](const Tensor& x) { return l2norm(x, 1e-12); });
    });

    return rep;
}

} // namespace ganscreen
