#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ganscreen/autograd.hpp"
#include "ganscreen/ops.hpp"
#include "ganscreen/tensor.hpp"
#include "helpers.hpp"

using namespace ganscreen;

TEST_CASE("tensor invariants", "[tensor]") {
    Tensor t = Tensor::zeros({2, 3});
    CHECK(t.numel() == 6);
    CHECK(t.rank() == 2);
    CHECK_THROWS_AS(Tensor::from_data({2, 3}, {1.0, 2.0}), std::invalid_argument);

    Tensor s = Tensor::scalar(4.5);
    CHECK(s.numel() == 1);
    CHECK(s.value() == 4.5);
    CHECK_THROWS_AS(t.value(), std::invalid_argument);
}

TEST_CASE("leaky_relu definition", "[ops]") {
    Tensor x = Tensor::from_data({3}, {-2.0, 0.0, 1.5});
    Tensor y = leaky_relu(x, 0.2);
    CHECK(y.data()[0] == Catch::Approx(-0.4));
    CHECK(y.data()[1] == 0.0);
    CHECK(y.data()[2] == Catch::Approx(1.5));
}

TEST_CASE("softplus at zero is ln 2", "[ops]") {
    Tensor y = softplus(Tensor::scalar(0.0));
    CHECK(y.value() == Catch::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("identity 1x1 convolution leaves input unchanged", "[ops]") {
    Rng rng(7);
    const int c = 3;
    Tensor x = Tensor::randn({2, c, 4, 4}, rng);
    std::vector<double> kd(static_cast<std::size_t>(c * c), 0.0);
    for (int i = 0; i < c; ++i) kd[static_cast<std::size_t>(i) * c + i] = 1.0;
    Tensor k = Tensor::from_data({c, c, 1, 1}, kd);
    Tensor y = conv2d(x, k, 0);
    CHECK(testutil::max_abs_diff(x, y) == 0.0);
}

TEST_CASE("conv2d rejects mismatched shapes with a diagnostic", "[ops]") {
    Tensor x = Tensor::zeros({1, 3, 4, 4});
    Tensor k = Tensor::zeros({2, 4, 3, 3});
    CHECK_THROWS_WITH(conv2d(x, k, 1), Catch::Matchers::ContainsSubstring("conv2d") &&
                                           Catch::Matchers::ContainsSubstring("[1,3,4,4]") &&
                                           Catch::Matchers::ContainsSubstring("[2,4,3,3]"));
    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2})), std::invalid_argument);
    CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({2, 4})), std::invalid_argument);
}

TEST_CASE("conv2d same padding matches hand-computed case", "[ops]") {
    // 1x1x3x3 input, 3x3 averaging kernel, pad 1
    Tensor x = Tensor::from_data({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor k = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor y = conv2d(x, k, 1);
    REQUIRE(y.shape() == Shape({1, 1, 3, 3}));
    CHECK(y.data()[0] == Catch::Approx(1 + 2 + 4 + 5)); // top-left corner
    CHECK(y.data()[4] == Catch::Approx(45.0));          // center sums all
}

TEST_CASE("broadcasting add/mul and sum_to are inverse in shape", "[ops]") {
    Rng rng(11);
    Tensor x = Tensor::randn({2, 3, 4, 4}, rng);
    Tensor b = Tensor::randn({3, 1, 1}, rng);
    Tensor y = add(x, b);
    REQUIRE(y.shape() == x.shape());
    // spot check
    auto idx = [&](int n, int c, int i, int j) { return ((n * 3 + c) * 4 + i) * 4 + j; };
    CHECK(y.data()[static_cast<std::size_t>(idx(1, 2, 3, 1))] ==
          Catch::Approx(x.data()[static_cast<std::size_t>(idx(1, 2, 3, 1))] + b.data()[2]));

    Tensor r = sum_to(y, {3, 1, 1});
    REQUIRE(r.shape() == Shape({3, 1, 1}));
    double expect = 0.0;
    for (int n = 0; n < 2; ++n)
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) expect += y.data()[static_cast<std::size_t>(idx(n, 1, i, j))];
    CHECK(r.data()[1] == Catch::Approx(expect));
}

TEST_CASE("matmul against hand-rolled triple loop", "[ops]") {
    Rng rng(3);
    Tensor a = Tensor::randn({3, 4}, rng);
    Tensor b = Tensor::randn({4, 2}, rng);
    Tensor c = matmul(a, b);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 2; ++j) {
            double s = 0.0;
            for (int k = 0; k < 4; ++k) s += a.data()[static_cast<std::size_t>(i) * 4 + k] * b.data()[static_cast<std::size_t>(k) * 2 + j];
            CHECK(c.data()[static_cast<std::size_t>(i) * 2 + j] == Catch::Approx(s));
        }
}

TEST_CASE("up2x and down2x are exact adjoints", "[ops][property]") {
    Rng rng(19);
    for (int rep = 0; rep < 20; ++rep) {
        const int h = 2 + 2 * static_cast<int>(rng.below(3));
        const int w = 2 + 2 * static_cast<int>(rng.below(3));
        Tensor x = Tensor::randn({1, 2, h, w}, rng);
        Tensor yu = Tensor::randn({1, 2, 2 * h, 2 * w}, rng);
        CHECK(testutil::dot(up2x(x), yu) == Catch::Approx(testutil::dot(x, up2x_adjoint(yu))).epsilon(1e-12));
        Tensor yd = Tensor::randn({1, 2, h / 2 * 2 / 2, w / 2}, rng);
        // regenerate with the right shape for the down direction
        yd = Tensor::randn({1, 2, h / 2, w / 2}, rng);
        CHECK(testutil::dot(down2x(x), yd) == Catch::Approx(testutil::dot(x, down2x_adjoint(yd))).epsilon(1e-12));
    }
}

TEST_CASE("down2x is the 2x2 box mean", "[ops]") {
    Tensor x = Tensor::from_data({1, 1, 2, 2}, {1.0, 3.0, 5.0, 7.0});
    CHECK(down2x(x).data()[0] == Catch::Approx(4.0));
}

TEST_CASE("concat0 / narrow0 round trip", "[ops]") {
    Rng rng(5);
    Tensor a = Tensor::randn({2, 3}, rng);
    Tensor b = Tensor::randn({1, 3}, rng);
    Tensor c = concat0({a, b});
    REQUIRE(c.shape() == Shape({3, 3}));
    CHECK(testutil::max_abs_diff(narrow0(c, 0, 2), a) == 0.0);
    CHECK(testutil::max_abs_diff(narrow0(c, 2, 1), b) == 0.0);
    CHECK_THROWS_AS(narrow0(c, 2, 2), std::invalid_argument);
}

TEST_CASE("forward ops keep finite inputs finite", "[ops][property]") {
    Rng rng(23);
    for (int rep = 0; rep < 10; ++rep) {
        Tensor x = Tensor::randn({2, 3, 4, 4}, rng, 10.0);
        Tensor k = Tensor::randn({2, 3, 3, 3}, rng, 10.0);
        for (double v : conv2d(x, k, 1).data()) REQUIRE(std::isfinite(v));
        for (double v : softplus(x).data()) REQUIRE(std::isfinite(v));
        for (double v : sigmoid(x).data()) REQUIRE(std::isfinite(v));
        for (double v : up2x(x).data()) REQUIRE(std::isfinite(v));
    }
}

TEST_CASE("forward determinism: same seed gives bit-identical results", "[ops]") {
    auto run = [] {
        Rng rng(99);
        Tensor x = Tensor::randn({2, 3, 8, 8}, rng);
        Tensor k = Tensor::randn({4, 3, 3, 3}, rng);
        Tensor y = leaky_relu(conv2d(x, k, 1), 0.2);
        return sum_all(mul(y, y)).value();
    };
    const double a = run();
    const double b = run();
    CHECK(std::memcmp(&a, &b, sizeof(double)) == 0);
}
