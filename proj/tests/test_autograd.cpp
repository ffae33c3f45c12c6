#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ganscreen/autograd.hpp"
#include "ganscreen/ops.hpp"
#include "helpers.hpp"

using namespace ganscreen;

TEST_CASE("d(x^2)/dx at 3 is 6", "[autograd]") {
    Tensor x = Tensor::scalar(3.0);
    x.set_requires_grad(true);
    Tensor loss = mul(x, x);
    backward(loss);
    REQUIRE(x.grad().defined());
    CHECK(x.grad().value() == Catch::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("loss constant in x has zero gradient", "[autograd]") {
    Tensor x = Tensor::from_data({3}, {1.0, -2.0, 0.5});
    x.set_requires_grad(true);
    Tensor loss = sum_all(mul(x, Tensor::zeros({3})));
    backward(loss);
    REQUIRE(x.grad().defined());
    for (double g : x.grad().data()) CHECK(g == 0.0);
}

TEST_CASE("matmul gradients match finite differences tightly", "[autograd]") {
    Rng rng(42);
    Tensor a0 = Tensor::randn({3, 4}, rng);
    Tensor b0 = Tensor::randn({4, 2}, rng);

    auto res_a = grad_check([&](const Tensor& a) { return sum_all(matmul(a, b0)); }, a0, 1e-5);
    CHECK(res_a.ok(1e-6));
    auto res_b = grad_check([&](const Tensor& b) { return sum_all(matmul(a0, b)); }, b0, 1e-5);
    CHECK(res_b.ok(1e-6));
}

TEST_CASE("backward rejects non-scalar losses", "[autograd]") {
    Tensor x = Tensor::ones({2});
    x.set_requires_grad(true);
    Tensor y = mul(x, x);
    CHECK_THROWS_AS(backward(y), std::invalid_argument);
}

TEST_CASE("second backward on a consumed graph is rejected", "[autograd]") {
    Tensor x = Tensor::scalar(2.0);
    x.set_requires_grad(true);
    Tensor loss = mul(x, x);
    backward(loss);
    CHECK_THROWS_AS(backward(loss), std::runtime_error);
}

TEST_CASE("gradient accumulates across separate graphs", "[autograd]") {
    Tensor x = Tensor::scalar(1.5);
    x.set_requires_grad(true);
    backward(mul(x, x));                  // d/dx = 3
    backward(mul_scalar(x, 4.0));         // d/dx = 4
    CHECK(x.grad().value() == Catch::Approx(7.0));
    x.zero_grad();
    CHECK_FALSE(x.grad().defined());
}

TEST_CASE("gradient of a sum is the sum of gradients", "[autograd][property]") {
    Rng rng(17);
    for (int rep = 0; rep < 10; ++rep) {
        Tensor x0 = Tensor::randn({5}, rng);
        Tensor c1 = Tensor::randn({5}, rng);
        Tensor c2 = Tensor::randn({5}, rng);
        auto grad_of = [&](auto f) {
            Tensor x = x0.detach();
            x.set_requires_grad(true);
            backward(f(x));
            return x.grad().detach();
        };
        Tensor g1 = grad_of([&](const Tensor& x) { return sum_all(mul(softplus(x), c1)); });
        Tensor g2 = grad_of([&](const Tensor& x) { return sum_all(mul(sigmoid(x), c2)); });
        Tensor gsum = grad_of([&](const Tensor& x) {
            return add(sum_all(mul(softplus(x), c1)), sum_all(mul(sigmoid(x), c2)));
        });
        for (int i = 0; i < 5; ++i)
            CHECK(gsum.data()[static_cast<std::size_t>(i)] ==
                  Catch::Approx(g1.data()[static_cast<std::size_t>(i)] + g2.data()[static_cast<std::size_t>(i)])
                      .epsilon(1e-12));
    }
}

TEST_CASE("grad_check: exact quadratic is tight", "[gradcheck]") {
    Rng rng(1);
    Tensor x = Tensor::randn({7}, rng);
    auto res = grad_check([](const Tensor& t) { return sum_all(mul(t, t)); }, x, 1e-5);
    CHECK(res.ok(1e-9));
}

TEST_CASE("grad_check: two-layer MLP away from kinks", "[gradcheck]") {
    Rng rng(2);
    Tensor w1 = Tensor::randn({6, 4}, rng);
    Tensor b1 = Tensor::randn({6}, rng, 0.1);
    Tensor w2 = Tensor::randn({1, 6}, rng);
    Tensor b2 = Tensor::randn({1}, rng, 0.1);
    Tensor x0 = Tensor::randn({3, 4}, rng);
    auto f = [&](const Tensor& x) {
        Tensor h = leaky_relu(linear(x, w1, b1), 0.2);
        return sum_all(linear(h, w2, b2));
    };
    auto res = grad_check(f, x0, 1e-5);
    CHECK(res.ok(1e-4));
}

TEST_CASE("grad_check flags rectifier kinks and excludes them", "[gradcheck]") {
    Tensor x = Tensor::from_data({3}, {0.0, 1.0, -1.0}); // coordinate 0 sits on the kink
    auto res = grad_check([](const Tensor& t) { return sum_all(leaky_relu(t, 0.2)); }, x, 1e-5);
    REQUIRE(res.excluded_kinks.size() == 1);
    CHECK(res.excluded_kinks[0] == 0);
    CHECK(res.max_rel_err < 1e-9); // remaining coordinates are linear
}

TEST_CASE("double backward: gradient norm of a quadratic", "[autograd][double]") {
    // f(x) = sum(x^2); g = df/dx = 2x; h = sum(g^2) = 4*sum(x^2); dh/dx = 8x.
    Tensor x = Tensor::from_data({3}, {1.0, -2.0, 0.5});
    x.set_requires_grad(true);
    Tensor f = sum_all(mul(x, x));
    Tensor g = grad(f, {x}, /*create_graph=*/true)[0];
    Tensor h = sum_all(mul(g, g));
    backward(h);
    REQUIRE(x.grad().defined());
    CHECK(x.grad().data()[0] == Catch::Approx(8.0));
    CHECK(x.grad().data()[1] == Catch::Approx(-16.0));
    CHECK(x.grad().data()[2] == Catch::Approx(4.0));
}

TEST_CASE("double backward through matmul and sigmoid", "[autograd][double]") {
    // h(w) = || d/dx sum(sigmoid(x W)) ||^2, checked against finite differences in w
    Rng rng(8);
    Tensor x0 = Tensor::randn({2, 3}, rng);
    Tensor w0 = Tensor::randn({3, 2}, rng);

    auto h_of_w = [&](const Tensor& w) {
        Tensor x = x0.detach();
        x.set_requires_grad(true);
        Tensor y = sum_all(sigmoid(matmul(x, w)));
        Tensor gx = grad(y, {x}, /*create_graph=*/true)[0];
        return sum_all(mul(gx, gx));
    };
    auto res = grad_check(h_of_w, w0, 1e-5);
    CHECK(res.ok(1e-6));
}

TEST_CASE("grad through intermediate tensors", "[autograd]") {
    // grad of sum((2x)^2) wrt the intermediate u = 2x is 2u
    Tensor x = Tensor::from_data({2}, {1.0, 3.0});
    x.set_requires_grad(true);
    Tensor u = mul_scalar(x, 2.0);
    Tensor loss = sum_all(mul(u, u));
    Tensor gu = grad(loss, {u}, /*create_graph=*/false)[0];
    CHECK(gu.data()[0] == Catch::Approx(4.0));
    CHECK(gu.data()[1] == Catch::Approx(12.0));
}

TEST_CASE("backward determinism", "[autograd]") {
    auto run = [] {
        Rng rng(1234);
        Tensor x = Tensor::randn({4, 5}, rng);
        x.set_requires_grad(true);
        Tensor w = Tensor::randn({5, 3}, rng);
        backward(sum_all(softplus(matmul(x, w))));
        std::vector<double> g(x.grad().data().begin(), x.grad().data().end());
        return g;
    };
    auto a = run();
    auto b = run();
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}
