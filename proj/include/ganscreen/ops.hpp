#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ganscreen/tensor.hpp"

// Differentiable primitives. Every VJP below is expressed through these same
// primitives, so running a backward pass with grad mode on records another
// differentiable graph (double backward).

namespace ganscreen {

namespace detail {

struct BcastPlan {
    Shape out;
    // per-output-dim strides into each operand, 0 where that operand broadcasts
    std::vector<std::int64_t> sa, sb;
};

inline BcastPlan make_bcast(const Shape& a, const Shape& b, const char* op) {
    std::size_t ra = a.size(), rb = b.size(), r = std::max(ra, rb);
    BcastPlan p;
    p.out.resize(r);
    p.sa.assign(r, 0);
    p.sb.assign(r, 0);
    // right-aligned dims
    std::vector<int> da(r, 1), db(r, 1);
    for (std::size_t i = 0; i < ra; ++i) da[r - ra + i] = a[i];
    for (std::size_t i = 0; i < rb; ++i) db[r - rb + i] = b[i];
    for (std::size_t i = 0; i < r; ++i) {
        if (da[i] == db[i]) p.out[i] = da[i];
        else if (da[i] == 1) p.out[i] = db[i];
        else if (db[i] == 1) p.out[i] = da[i];
        else
            throw std::invalid_argument(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                                        " are not broadcast-compatible");
    }
    std::int64_t stride = 1;
    for (std::size_t i = r; i-- > 0;) {
        p.sa[i] = (da[i] == 1) ? 0 : stride;
        stride *= da[i];
    }
    stride = 1;
    for (std::size_t i = r; i-- > 0;) {
        p.sb[i] = (db[i] == 1) ? 0 : stride;
        stride *= db[i];
    }
    return p;
}

// Elementwise binary op with broadcasting.
template <typename F>
Tensor map2(const Tensor& a, const Tensor& b, const char* /*op*/, const BcastPlan& p, F f) {
    Tensor out = Tensor::zeros(p.out);
    auto av = a.data();
    auto bv = b.data();
    auto ov = out.data();
    const std::size_t n = ov.size();
    if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < n; ++i) ov[i] = f(av[i], bv[i]);
        return out;
    }
    if (b.numel() == 1) {
        const double s = bv[0];
        for (std::size_t i = 0; i < n; ++i) ov[i] = f(av[i], s);
        return out;
    }
    if (a.numel() == 1) {
        const double s = av[0];
        for (std::size_t i = 0; i < n; ++i) ov[i] = f(s, bv[i]);
        return out;
    }
    const std::size_t r = p.out.size();
    std::vector<std::int64_t> idx(r, 0);
    std::int64_t oa = 0, ob = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ov[i] = f(av[static_cast<std::size_t>(oa)], bv[static_cast<std::size_t>(ob)]);
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            oa += p.sa[d];
            ob += p.sb[d];
            if (idx[d] < p.out[d]) break;
            oa -= p.sa[d] * p.out[d];
            ob -= p.sb[d] * p.out[d];
            idx[d] = 0;
        }
    }
    return out;
}

template <typename F>
Tensor map1(const Tensor& a, F f) {
    Tensor out = Tensor::zeros(a.shape());
    auto av = a.data();
    auto ov = out.data();
    for (std::size_t i = 0; i < av.size(); ++i) ov[i] = f(av[i]);
    return out;
}

} // namespace detail

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor sum_to(const Tensor& a, const Shape& target);
Tensor broadcast_to(const Tensor& a, const Shape& target);

// --- reductions / broadcast ---------------------------------------------

inline Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    Tensor out = Tensor::scalar(s);
    attach_node(out, "sum_all", {a}, [a](const Tensor& g) -> std::vector<Tensor> {
        return {is_tracked(a) ? broadcast_to(g, a.shape()) : Tensor{}};
    });
    return out;
}

inline Tensor broadcast_to(const Tensor& a, const Shape& target) {
    auto p = detail::make_bcast(a.shape(), target, "broadcast_to");
    if (p.out != target)
        throw std::invalid_argument("broadcast_to: " + shape_str(a.shape()) + " does not broadcast to " +
                                    shape_str(target));
    Tensor out = detail::map2(a, Tensor::zeros(target), "broadcast_to", p, [](double x, double) { return x; });
    Shape from = a.shape();
    attach_node(out, "broadcast_to", {a}, [a, from](const Tensor& g) -> std::vector<Tensor> {
        return {is_tracked(a) ? sum_to(g, from) : Tensor{}};
    });
    return out;
}

// Inverse of broadcasting: sum over the dims `a` would have been expanded
// along to reach shape `target`.
inline Tensor sum_to(const Tensor& a, const Shape& target) {
    if (a.shape() == target) return add(a, Tensor::zeros(target)); // keeps graph semantics uniform
    std::size_t ra = a.shape().size(), rt = target.size();
    if (rt > ra)
        throw std::invalid_argument("sum_to: target rank exceeds input rank");
    std::vector<int> dt(ra, 1);
    for (std::size_t i = 0; i < rt; ++i) dt[ra - rt + i] = target[i];
    for (std::size_t i = 0; i < ra; ++i)
        if (dt[i] != 1 && dt[i] != a.shape()[i])
            throw std::invalid_argument("sum_to: " + shape_str(a.shape()) + " cannot reduce to " + shape_str(target));

    Tensor out = Tensor::zeros(target);
    auto av = a.data();
    auto ov = out.data();
    std::vector<std::int64_t> st(ra, 0);
    std::int64_t stride = 1;
    for (std::size_t i = ra; i-- > 0;) {
        st[i] = (dt[i] == 1) ? 0 : stride;
        stride *= dt[i];
    }
    std::vector<std::int64_t> idx(ra, 0);
    std::int64_t off = 0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        ov[static_cast<std::size_t>(off)] += av[i];
        for (std::size_t d = ra; d-- > 0;) {
            ++idx[d];
            off += st[d];
            if (idx[d] < a.shape()[d]) break;
            off -= st[d] * a.shape()[d];
            idx[d] = 0;
        }
    }
    attach_node(out, "sum_to", {a}, [a](const Tensor& g) -> std::vector<Tensor> {
        return {is_tracked(a) ? broadcast_to(g, a.shape()) : Tensor{}};
    });
    return out;
}

// --- elementwise arithmetic ----------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    auto p = detail::make_bcast(a.shape(), b.shape(), "add");
    Tensor out = detail::map2(a, b, "add", p, [](double x, double y) { return x + y; });
    attach_node(out, "add", {a, b}, [a, b](const Tensor& g) -> std::vector<Tensor> {
        std::vector<Tensor> gs(2);
        if (is_tracked(a)) gs[0] = sum_to(g, a.shape());
        if (is_tracked(b)) gs[1] = sum_to(g, b.shape());
        return gs;
    });
    return out;
}

inline Tensor neg(const Tensor& a) {
    Tensor out = detail::map1(a, [](double x) { return -x; });
    attach_node(out, "neg", {a}, [a](const Tensor& g) -> std::vector<Tensor> {
        return {is_tracked(a) ? neg(g) : Tensor{}};
    });
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    auto p = detail::make_bcast(a.shape(), b.shape(), "sub");
    Tensor out = detail::map2(a, b, "sub", p, [](double x, double y) { return x - y; });
    attach_node(out, "sub", {a, b}, [a, b](const Tensor& g) -> std::vector<Tensor> {
        std::vector<Tensor> gs(2);
        if (is_tracked(a)) gs[0] = sum_to(g, a.shape());
        if (is_tracked(b)) gs[1] = neg(sum_to(g, b.shape()));
        return gs;
    });
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    auto p = detail::make_bcast(a.shape(), b.shape(), "mul");
    Tensor out = detail::map2(a, b, "mul", p, [](double x, double y) { return x * y; });
    attach_node(out, "mul", {a, b}, [a, b](const Tensor& g) -> std::vector<Tensor> {
        std::vector<Tensor> gs(2);
        if (is_tracked(a)) gs[0] = sum_to(mul(g, b), a.shape());
        if (is_tracked(b)) gs[1] = sum_to(mul(g, a), b.shape());
        return gs;
    });
    return out;
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    auto p = detail::make_bcast(a.shape(), b.shape(), "div");
    Tensor out = detail::map2(a, b, "div", p, [](double x, double y) { return x / y; });
    attach_node(out, "div", {a, b}, [a, b](const Tensor& g) -> std::vector<Tensor> {
        std::vector<Tensor> gs(2);
        if (is_tracked(a)) gs[0] = sum_to(div(g, b), a.shape());
        if (is_tracked(b)) gs[1] = sum_to(neg(div(mul(g, a), mul(b, b))), b.shape());
        return gs;
    });
    return out;
}

inline Tensor mul_scalar(const Tensor& a, double s) { return mul(a, Tensor::scalar(s)); }
inline Tensor add_scalar(const Tensor& a, double s) { return add(a, Tensor::scalar(s)); }

inline Tensor mean_all(const Tensor& a) {
    return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

// --- shape ops -------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape target) {
    if (shape_numel(target) != a.numel())
        throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(target));
    Tensor out = Tensor::from_data(target, std::vector<double>(a.data().begin(), a.data().end()));
    Shape from = a.shape();
    attach_node(out, "reshape", {a}, [a, from](const Tensor& g) -> std::vector<Tensor> {
        return {is_tracked(a) ? reshape(g, from) : Tensor{}};
    });
    return out;
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw std::invalid_argument("transpose: expected rank-2, got " + shape_str(a.shape()));
    const int m = a.dim(0), n = a.dim(1);
    Tensor out = Tensor::zeros({n, m});
    auto av = a.data();
    auto ov = out.data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) ov[static_cast<std::size_t>(j) * m + i] = av[static_cast<std::size_t>(i) * n + j];
    attach_node(out, "transpose", {a}, [a](const Tensor& g) -> std::vector<Tensor> {
        return {is_tracked(a) ? transpose(g) : Tensor{}};
    });
    return out;
}

// swap the first two dims of a rank-4 tensor
inline Tensor transpose01(const Tensor& a) {
    if (a.rank() != 4) throw std::invalid_argument("transpose01: expected rank-4, got " + shape_str(a.shape()));
    const int d0 = a.dim(0), d1 = a.dim(1), d2 = a.dim(2), d3 = a.dim(3);
    Tensor out = Tensor::zeros({d1, d0, d2, d3});
    auto av = a.data();
    auto ov = out.data();
    const std::int64_t plane = static_cast<std::int64_t>(d2) * d3;
    for (int i = 0; i < d0; ++i)
        for (int j = 0; j < d1; ++j) {
            const double* src = av.data() + (static_cast<std::int64_t>(i) * d1 + j) * plane;
            double* dst = ov.data() + (static_cast<std::int64_t>(j) * d0 + i) * plane;
            std::copy(src, src + plane, dst);
        }
    attach_node(out, "transpose01", {a}, [a](const Tensor& g) -> std::vector<Tensor> {
        return {is_tracked(a) ? transpose01(g) : Tensor{}};
    });
    return out;
}

// flip a rank-4 tensor along its two trailing (spatial) dims
inline Tensor flip_spatial(const Tensor& a) {
    if (a.rank() != 4) throw std::invalid_argument("flip_spatial: expected rank-4, got " + shape_str(a.shape()));
    const int d0 = a.dim(0), d1 = a.dim(1), h = a.dim(2), w = a.dim(3);
    Tensor out = Tensor::zeros(a.shape());
    auto av = a.data();
    auto ov = out.data();
    for (int p = 0; p < d0 * d1; ++p) {
        const double* src = av.data() + static_cast<std::int64_t>(p) * h * w;
        double* dst = ov.data() + static_cast<std::int64_t>(p) * h * w;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) dst[y * w + x] = src[(h - 1 - y) * w + (w - 1 - x)];
    }
    attach_node(out, "flip_spatial", {a}, [a](const Tensor& g) -> std::vector<Tensor> {
        return {is_tracked(a) ? flip_spatial(g) : Tensor{}};
    });
    return out;
}

// --- rows: narrow / embed / concat along dim 0 ------------------------------

Tensor embed0(const Tensor& a, int start, int total);

inline Tensor narrow0(const Tensor& a, int start, int len) {
    if (a.rank() < 1) throw std::invalid_argument("narrow0: rank-0 input");
    const int n = a.dim(0);
    if (start < 0 || len < 1 || start + len > n)
        throw std::invalid_argument("narrow0: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                                    ") out of bounds for dim0=" + std::to_string(n));
    Shape os = a.shape();
    os[0] = len;
    const std::int64_t row = a.numel() / n;
    Tensor out = Tensor::zeros(os);
    std::copy(a.data().begin() + start * row, a.data().begin() + (start + len) * row, out.data().begin());
    attach_node(out, "narrow0", {a}, [a, start, n](const Tensor& g) -> std::vector<Tensor> {
        return {is_tracked(a) ? embed0(g, start, n) : Tensor{}};
    });
    return out;
}

// place `a` into a zero tensor whose dim0 is `total`, starting at row `start`
inline Tensor embed0(const Tensor& a, int start, int total) {
    if (a.rank() < 1) throw std::invalid_argument("embed0: rank-0 input");
    const int len = a.dim(0);
    if (start < 0 || start + len > total)
        throw std::invalid_argument("embed0: range out of bounds");
    Shape os = a.shape();
    os[0] = total;
    const std::int64_t row = a.numel() / len;
    Tensor out = Tensor::zeros(os);
    std::copy(a.data().begin(), a.data().end(), out.data().begin() + start * row);
    attach_node(out, "embed0", {a}, [a, start, len](const Tensor& g) -> std::vector<Tensor> {
        return {is_tracked(a) ? narrow0(g, start, len) : Tensor{}};
    });
    return out;
}

inline Tensor concat0(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat0: empty input list");
    Shape os = xs[0].shape();
    if (os.empty()) throw std::invalid_argument("concat0: rank-0 inputs");
    int total = 0;
    for (const auto& x : xs) {
        if (x.rank() != static_cast<int>(os.size()) ||
            !std::equal(os.begin() + 1, os.end(), x.shape().begin() + 1))
            throw std::invalid_argument("concat0: mismatched trailing shape " + shape_str(x.shape()));
        total += x.dim(0);
    }
    os[0] = total;
    Tensor out = Tensor::zeros(os);
    std::int64_t off = 0;
    std::vector<int> starts;
    std::vector<int> lens;
    for (const auto& x : xs) {
        std::copy(x.data().begin(), x.data().end(), out.data().begin() + off);
        starts.push_back(static_cast<int>(off / (x.numel() / x.dim(0))));
        lens.push_back(x.dim(0));
        off += x.numel();
    }
    attach_node(out, "concat0", {xs}, [xs, starts, lens](const Tensor& g) -> std::vector<Tensor> {
        std::vector<Tensor> gs(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i)
            if (is_tracked(xs[i])) gs[i] = narrow0(g, starts[i], lens[i]);
        return gs;
    });
    return out;
}

// --- matmul ------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    const int m = a.dim(0), n = a.dim(1), p = b.dim(1);
    Tensor out = Tensor::zeros({m, p});
    auto av = a.data();
    auto bv = b.data();
    auto ov = out.data();
    for (int i = 0; i < m; ++i) {
        double* orow = ov.data() + static_cast<std::int64_t>(i) * p;
        for (int k = 0; k < n; ++k) {
            const double aik = av[static_cast<std::size_t>(i) * n + k];
            if (aik == 0.0) continue;
            const double* brow = bv.data() + static_cast<std::int64_t>(k) * p;
            for (int j = 0; j < p; ++j) orow[j] += aik * brow[j];
        }
    }
    attach_node(out, "matmul", {a, b}, [a, b](const Tensor& g) -> std::vector<Tensor> {
        std::vector<Tensor> gs(2);
        if (is_tracked(a)) gs[0] = matmul(g, transpose(b));
        if (is_tracked(b)) gs[1] = matmul(transpose(a), g);
        return gs;
    });
    return out;
}

// --- nonlinearities ------------------------------------------------------------

// Derivative at exactly 0 uses the negative-side slope.
inline Tensor leaky_relu(const Tensor& a, double slope) {
    Tensor out = detail::map1(a, [slope](double x) { return x > 0.0 ? x : slope * x; });
    attach_node(out, "leaky_relu", {a}, [a, slope](const Tensor& g) -> std::vector<Tensor> {
        if (!is_tracked(a)) return {Tensor{}};
        Tensor mask = detail::map1(a, [slope](double x) { return x > 0.0 ? 1.0 : slope; });
        return {mul(g, mask)};
    });
    return out;
}

inline Tensor sigmoid(const Tensor& a) {
    Tensor out = detail::map1(a, [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        double e = std::exp(x);
        return e / (1.0 + e);
    });
    attach_node(out, "sigmoid", {a}, [a](const Tensor& g) -> std::vector<Tensor> {
        if (!is_tracked(a)) return {Tensor{}};
        Tensor s = sigmoid(a);
        return {mul(g, mul(s, sub(Tensor::scalar(1.0), s)))};
    });
    return out;
}

inline Tensor softplus(const Tensor& a) {
    Tensor out = detail::map1(a, [](double x) {
        // ln(1+e^x), stable on both tails
        return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    });
    attach_node(out, "softplus", {a}, [a](const Tensor& g) -> std::vector<Tensor> {
        return {is_tracked(a) ? mul(g, sigmoid(a)) : Tensor{}};
    });
    return out;
}

inline Tensor sqrt(const Tensor& a) {
    Tensor out = detail::map1(a, [](double x) { return std::sqrt(x); });
    attach_node(out, "sqrt", {a}, [a](const Tensor& g) -> std::vector<Tensor> {
        if (!is_tracked(a)) return {Tensor{}};
        return {mul_scalar(div(g, sqrt(a)), 0.5)};
    });
    return out;
}

// Derivative at exactly 0 is taken as 0.
inline Tensor abs(const Tensor& a) {
    Tensor out = detail::map1(a, [](double x) { return std::abs(x); });
    attach_node(out, "abs", {a}, [a](const Tensor& g) -> std::vector<Tensor> {
        if (!is_tracked(a)) return {Tensor{}};
        Tensor sign = detail::map1(a, [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
        return {mul(g, sign)};
    });
    return out;
}

// --- convolution ------------------------------------------------------------

// Direct 2-D convolution (cross-correlation), stride 1, square kernel,
// symmetric zero padding. x: [N,C,H,W], k: [O,C,kh,kw].
inline Tensor conv2d(const Tensor& x, const Tensor& k, int pad) {
    if (x.rank() != 4 || k.rank() != 4)
        throw std::invalid_argument("conv2d: expected rank-4 input and kernel, got " + shape_str(x.shape()) + " and " +
                                    shape_str(k.shape()));
    if (x.dim(1) != k.dim(1))
        throw std::invalid_argument("conv2d: channel mismatch, input " + shape_str(x.shape()) + " vs kernel " +
                                    shape_str(k.shape()));
    if (k.dim(2) != k.dim(3))
        throw std::invalid_argument("conv2d: non-square kernel " + shape_str(k.shape()));
    if (pad < 0) throw std::invalid_argument("conv2d: negative padding");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int o = k.dim(0), ks = k.dim(2);
    const int ho = h + 2 * pad - ks + 1;
    const int wo = w + 2 * pad - ks + 1;
    if (ho < 1 || wo < 1)
        throw std::invalid_argument("conv2d: kernel " + shape_str(k.shape()) + " too large for input " +
                                    shape_str(x.shape()) + " with pad " + std::to_string(pad));
    Tensor out = Tensor::zeros({n, o, ho, wo});
    auto xv = x.data();
    auto kv = k.data();
    auto ov = out.data();
    for (int in = 0; in < n; ++in) {
        for (int io = 0; io < o; ++io) {
            double* oplane = ov.data() + (static_cast<std::int64_t>(in) * o + io) * ho * wo;
            for (int ic = 0; ic < c; ++ic) {
                const double* xplane = xv.data() + (static_cast<std::int64_t>(in) * c + ic) * h * w;
                const double* krow = kv.data() + (static_cast<std::int64_t>(io) * c + ic) * ks * ks;
                for (int ky = 0; ky < ks; ++ky) {
                    for (int kx = 0; kx < ks; ++kx) {
                        const double kw = krow[ky * ks + kx];
                        if (kw == 0.0) continue;
                        const int y0 = std::max(0, pad - ky);
                        const int y1 = std::min(ho, h + pad - ky);
                        const int x0 = std::max(0, pad - kx);
                        const int x1 = std::min(wo, w + pad - kx);
                        for (int y = y0; y < y1; ++y) {
                            const double* xr = xplane + (y + ky - pad) * w + (x0 + kx - pad);
                            double* orow = oplane + y * wo + x0;
                            for (int xx = 0; xx < x1 - x0; ++xx) orow[xx] += kw * xr[xx];
                        }
                    }
                }
            }
        }
    }
    attach_node(out, "conv2d", {x, k}, [x, k, pad, ks](const Tensor& g) -> std::vector<Tensor> {
        std::vector<Tensor> gs(2);
        if (is_tracked(x)) gs[0] = conv2d(g, flip_spatial(transpose01(k)), ks - 1 - pad);
        if (is_tracked(k)) gs[1] = transpose01(conv2d(transpose01(x), transpose01(g), pad));
        return gs;
    });
    return out;
}

// --- 2x resampling -----------------------------------------------------------

namespace detail {

// Enumerates the 1-d bilinear 2x upsampling taps: out[j] = sum w * in[i].
template <typename F>
inline void up2_taps(int n, F emit) {
    for (int j = 0; j < 2 * n; ++j) {
        const int i = j / 2;
        if (j % 2 == 0) {
            emit(j, i, 0.75);
            emit(j, std::max(i - 1, 0), 0.25);
        } else {
            emit(j, i, 0.75);
            emit(j, std::min(i + 1, n - 1), 0.25);
        }
    }
}

// Apply the 1-d up2 stencil (or its adjoint) along rows of a [rows, n] view.
inline std::vector<double> up2_axis(const std::vector<double>& src, std::int64_t rows, int n, bool adjoint) {
    std::vector<double> dst(static_cast<std::size_t>(rows) * (adjoint ? n : 2 * n), 0.0);
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* s = src.data() + r * (adjoint ? 2 * n : n);
        double* d = dst.data() + r * (adjoint ? n : 2 * n);
        up2_taps(n, [&](int j, int i, double w) {
            if (adjoint) d[i] += w * s[j];
            else d[j] += w * s[i];
        });
    }
    return dst;
}

// Transpose the two trailing dims of a [rows, h, w] buffer.
inline std::vector<double> swap_hw(const std::vector<double>& src, std::int64_t rows, int h, int w) {
    std::vector<double> dst(src.size());
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* s = src.data() + r * h * w;
        double* d = dst.data() + r * h * w;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) d[static_cast<std::int64_t>(x) * h + y] = s[static_cast<std::int64_t>(y) * w + x];
    }
    return dst;
}

} // namespace detail

Tensor up2x_adjoint(const Tensor& a);

// Bilinear 2x upsampling of [N,C,H,W] -> [N,C,2H,2W] (edge-replicated taps).
inline Tensor up2x(const Tensor& a) {
    if (a.rank() != 4) throw std::invalid_argument("up2x: expected rank-4, got " + shape_str(a.shape()));
    const int n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
    const std::int64_t planes = static_cast<std::int64_t>(n) * c;
    // rows pass on W, then on H via transposes
    std::vector<double> buf(a.data().begin(), a.data().end());
    buf = detail::up2_axis(buf, planes * h, w, false);            // [.., h, 2w]
    buf = detail::swap_hw(buf, planes, h, 2 * w);                 // [.., 2w, h]
    buf = detail::up2_axis(buf, planes * 2 * w, h, false);        // [.., 2w, 2h]
    buf = detail::swap_hw(buf, planes, 2 * w, 2 * h);             // [.., 2h, 2w]
    Tensor out = Tensor::from_data({n, c, 2 * h, 2 * w}, std::move(buf));
    attach_node(out, "up2x", {a}, [a](const Tensor& g) -> std::vector<Tensor> {
        return {is_tracked(a) ? up2x_adjoint(g) : Tensor{}};
    });
    return out;
}

// Exact adjoint of up2x: [N,C,2H,2W] -> [N,C,H,W].
inline Tensor up2x_adjoint(const Tensor& a) {
    if (a.rank() != 4) throw std::invalid_argument("up2x_adjoint: expected rank-4, got " + shape_str(a.shape()));
    const int n = a.dim(0), c = a.dim(1), h2 = a.dim(2), w2 = a.dim(3);
    if (h2 % 2 || w2 % 2) throw std::invalid_argument("up2x_adjoint: odd spatial dims " + shape_str(a.shape()));
    const int h = h2 / 2, w = w2 / 2;
    const std::int64_t planes = static_cast<std::int64_t>(n) * c;
    std::vector<double> buf(a.data().begin(), a.data().end());
    buf = detail::swap_hw(buf, planes, h2, w2);                   // [.., 2w, 2h]
    buf = detail::up2_axis(buf, planes * w2, h, true);            // [.., 2w, h]
    buf = detail::swap_hw(buf, planes, w2, h);                    // [.., h, 2w]
    buf = detail::up2_axis(buf, planes * h, w, true);             // [.., h, w]
    Tensor out = Tensor::from_data({n, c, h, w}, std::move(buf));
    attach_node(out, "up2x_adjoint", {a}, [a](const Tensor& g) -> std::vector<Tensor> {
        return {is_tracked(a) ? up2x(g) : Tensor{}};
    });
    return out;
}

Tensor down2x_adjoint(const Tensor& a);

// 2x2 box-mean downsampling of [N,C,H,W] -> [N,C,H/2,W/2].
inline Tensor down2x(const Tensor& a) {
    if (a.rank() != 4) throw std::invalid_argument("down2x: expected rank-4, got " + shape_str(a.shape()));
    const int n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
    if (h % 2 || w % 2) throw std::invalid_argument("down2x: odd spatial dims " + shape_str(a.shape()));
    Tensor out = Tensor::zeros({n, c, h / 2, w / 2});
    auto av = a.data();
    auto ov = out.data();
    const std::int64_t planes = static_cast<std::int64_t>(n) * c;
    for (std::int64_t p = 0; p < planes; ++p) {
        const double* s = av.data() + p * h * w;
        double* d = ov.data() + p * (h / 2) * (w / 2);
        for (int y = 0; y < h / 2; ++y)
            for (int x = 0; x < w / 2; ++x)
                d[y * (w / 2) + x] = 0.25 * (s[(2 * y) * w + 2 * x] + s[(2 * y) * w + 2 * x + 1] +
                                             s[(2 * y + 1) * w + 2 * x] + s[(2 * y + 1) * w + 2 * x + 1]);
    }
    attach_node(out, "down2x", {a}, [a](const Tensor& g) -> std::vector<Tensor> {
        return {is_tracked(a) ? down2x_adjoint(g) : Tensor{}};
    });
    return out;
}

// Exact adjoint of down2x: spread g/4 over each 2x2 cell.
inline Tensor down2x_adjoint(const Tensor& a) {
    if (a.rank() != 4) throw std::invalid_argument("down2x_adjoint: expected rank-4, got " + shape_str(a.shape()));
    const int n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
    Tensor out = Tensor::zeros({n, c, 2 * h, 2 * w});
    auto av = a.data();
    auto ov = out.data();
    const std::int64_t planes = static_cast<std::int64_t>(n) * c;
    for (std::int64_t p = 0; p < planes; ++p) {
        const double* s = av.data() + p * h * w;
        double* d = ov.data() + p * 4 * h * w;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double v = 0.25 * s[y * w + x];
                d[(2 * y) * 2 * w + 2 * x] += v;
                d[(2 * y) * 2 * w + 2 * x + 1] += v;
                d[(2 * y + 1) * 2 * w + 2 * x] += v;
                d[(2 * y + 1) * 2 * w + 2 * x + 1] += v;
            }
    }
    attach_node(out, "down2x_adjoint", {a}, [a](const Tensor& g) -> std::vector<Tensor> {
        return {is_tracked(a) ? down2x(g) : Tensor{}};
    });
    return out;
}

// --- common compositions -----------------------------------------------------

// x: [N,in], w: [out,in], b: [out] -> [N,out]
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add(matmul(x, transpose(w)), b);
}

inline Tensor square(const Tensor& x) { return mul(x, x); }

inline Tensor l2norm_sq(const Tensor& x) { return sum_all(square(x)); }

inline Tensor l2norm(const Tensor& x, double eps = 0.0) {
    return sqrt(add_scalar(l2norm_sq(x), eps));
}

// Per-row sum of squares of a [N,M] tensor -> [N,1]
inline Tensor row_sumsq(const Tensor& x) {
    if (x.rank() != 2) throw std::invalid_argument("row_sumsq: expected rank-2, got " + shape_str(x.shape()));
    return matmul(square(x), Tensor::ones({x.dim(1), 1}));
}

} // namespace ganscreen
