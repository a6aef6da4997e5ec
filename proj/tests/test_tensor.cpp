#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "flowcycle/adam.hpp"
#include "flowcycle/rng.hpp"
#include "flowcycle/tensor.hpp"

using namespace flowcycle;

TEST_CASE("rng_normal is deterministic for identical (seed, counter)") {
    RngStream a(7), b(7);
    Tensor ta = rng_normal(a, {4});
    Tensor tb = rng_normal(b, {4});
    REQUIRE(ta.values() == tb.values());
    // Second draw differs from the first.
    REQUIRE(rng_normal(a, {4}).values() != ta.values());
}

TEST_CASE("rng_normal matches standard-normal moments") {
    RngStream s(42);
    const std::size_t n = 1000000;
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = s.next_normal();
        sum += x;
        sq += x * x;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    REQUIRE(std::abs(mean) < 0.01);
    REQUIRE(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("rng_normal rejects empty shape") {
    RngStream s(1);
    REQUIRE_THROWS_AS(rng_normal(s, {}), std::invalid_argument);
}

TEST_CASE("mse hand values") {
    Tensor a({2}, {1.0, 1.0});
    Tensor b({2}, {0.0, 0.0});
    REQUIRE(mse(a, a).item() == 0.0);
    REQUIRE(mse(a, b).item() == 1.0);
    Tensor c({2}, {2.0, 0.0});
    REQUIRE(mse(c, b).item() == 2.0);
    Tensor d({3}, {0.0, 0.0, 0.0});
    REQUIRE_THROWS_AS(mse(a, d), std::invalid_argument);
}

TEST_CASE("backward on mse against zero gives 2x/n") {
    Tensor x({1}, {3.0}, true);
    Tensor loss = mse(x, Tensor({1}, {0.0}));
    backward(loss);
    REQUIRE(x.grad()[0] == Catch::Approx(6.0));
}

TEST_CASE("backward rejects non-scalar root") {
    Tensor x({2}, {1.0, 2.0}, true);
    REQUIRE_THROWS_AS(backward(add(x, x)), std::invalid_argument);
}

TEST_CASE("non-participating leaf has zero gradient") {
    Tensor x({2}, {1.0, 2.0}, true);
    Tensor w({2}, {5.0, 5.0}, true);
    backward(mse(x, Tensor({2}, {0.0, 0.0})));
    REQUIRE(w.grad() == std::vector<double>{0.0, 0.0});
    REQUIRE(x.grad()[0] != 0.0);
}

namespace {

// Small fixed MLP used as a generic nonlinear graph.
Tensor mlp_loss(const Tensor& x, std::uint64_t seed) {
    RngStream s(seed);
    Tensor w1 = rng_normal(s, {5, x.size()});
    Tensor b1 = rng_normal(s, {5});
    Tensor w2 = rng_normal(s, {1, 5});
    Tensor b2 = rng_normal(s, {1});
    Tensor h = tanh_t(linear(w1, x, b1));
    Tensor out = linear(w2, h, b2);
    return mse(out, Tensor({1}, {0.3}));
}

}  // namespace

TEST_CASE("grad_check: analytic cases") {
    RngStream s(11);
    Tensor x = rng_normal(s, {6});
    // Sum of squares: gradient 2x.
    auto sq = [](const Tensor& t) { return scale(mse(t, Tensor::zeros(t.shape())), 6.0); };
    REQUIRE(grad_check(sq, x, 1e-5) < 1e-6);
    // Constant: both gradients zero.
    auto constant = [](const Tensor& t) { return add(scale(sum(t), 0.0), Tensor::scalar(2.0)); };
    REQUIRE(grad_check(constant, x, 1e-5) == 0.0);
}

TEST_CASE("grad_check: random MLP matches finite differences") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        RngStream s(100 + seed);
        Tensor x = rng_normal(s, {4});
        auto f = [seed](const Tensor& t) { return mlp_loss(t, seed); };
        REQUIRE(grad_check(f, x, 1e-5) < 1e-4);
    }
}

TEST_CASE("graph linearity: d x_t / d eps is t * I") {
    const double t = 0.37;
    RngStream s(3);
    Tensor x0 = rng_normal(s, {4});
    Tensor eps = rng_normal(s, {4});
    eps.set_requires_grad(true);
    Tensor xt = add(scale(x0, 1.0 - t), scale(eps, t));
    for (std::size_t j = 0; j < 4; ++j) {
        std::vector<double> sel(4, 0.0);
        sel[j] = 1.0;
        backward(sum(mul(xt, Tensor({4}, sel))));
        for (std::size_t k = 0; k < 4; ++k)
            REQUIRE(eps.grad()[k] == (k == j ? t : 0.0));
    }
}

TEST_CASE("tracked ops keep values finite and propagate shapes") {
    RngStream s(9);
    Tensor a = rng_normal(s, {3});
    Tensor b = rng_normal(s, {3});
    a.set_requires_grad(true);
    Tensor c = concat({tanh_t(add(a, b)), mul(a, b), sub(a, b)});
    REQUIRE(c.shape() == std::vector<std::size_t>{9});
    REQUIRE(c.all_finite());
    REQUIRE(c.requires_grad());
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    Tensor p({3}, {1.0, -2.0, 0.5});
    AdamState st(3);
    std::vector<double> g(3, 0.0);
    adam_step(p, g, st, 0.1);
    REQUIRE(p.values() == std::vector<double>{1.0, -2.0, 0.5});
    REQUIRE(st.step_count == 1);
}

TEST_CASE("adam: first-step magnitude is about lr") {
    Tensor p({1}, {0.0});
    AdamState st(1);
    std::vector<double> g = {0.4};
    adam_step(p, g, st, 0.1);
    // Bias-corrected first step: lr * g / (|g| + eps * sqrt(1)).
    REQUIRE(p.values()[0] == Catch::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("adam: constant gradient moves monotonically against its sign") {
    Tensor p({1}, {1.0});
    AdamState st(1);
    std::vector<double> g = {2.5};
    adam_step(p, g, st, 0.05);
    const double after_one = p.values()[0];
    adam_step(p, g, st, 0.05);
    REQUIRE(st.step_count == 2);
    REQUIRE(after_one < 1.0);
    REQUIRE(p.values()[0] < after_one);
}

TEST_CASE("adam: NaN gradient is rejected with state untouched") {
    Tensor p({2}, {1.0, 1.0});
    AdamState st(2);
    std::vector<double> g = {0.1, std::nan("")};
    REQUIRE_THROWS_AS(adam_step(p, g, st, 0.1), numeric_failure);
    REQUIRE(st.step_count == 0);
    REQUIRE(p.values() == std::vector<double>{1.0, 1.0});
}
