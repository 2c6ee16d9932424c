#include <catch2/catch_amalgamated.hpp>

#include <utility>

#include "srforge/nn.hpp"
#include "testutil.hpp"

using namespace srforge;
using namespace srforge::nn;
using testutil::random_tensor;

TEST_CASE("shared subexpressions accumulate gradients once per use") {
    auto x = Tensor::from_data({1}, {3.0}, true);
    // y = x*x + x*x uses the same product node twice via add.
    auto p = mul(x, x);
    auto y = add(p, p);
    y.backward();
    // dy/dx = 2 * 2x = 12.
    CHECK(x.grad()[0] == Catch::Approx(12.0));
}

TEST_CASE("backward accumulates across calls until zero_grad") {
    auto x = Tensor::from_data({1}, {2.0}, true);
    auto loss = [&]() { return mul(x, x); };
    loss().backward();
    CHECK(x.grad()[0] == Catch::Approx(4.0));
    loss().backward();
    CHECK(x.grad()[0] == Catch::Approx(8.0)); // additive accumulation
    x.zero_grad();
    loss().backward();
    CHECK(x.grad()[0] == Catch::Approx(4.0));
}

TEST_CASE("backward requires a scalar with gradients") {
    auto x = Tensor::from_data({2}, {1.0, 2.0}, true);
    CHECK_THROWS_AS(x.backward(), Error);
    auto frozen = Tensor::from_data({1}, {1.0}, false);
    CHECK_THROWS_AS(frozen.backward(), Error);
}

TEST_CASE("ops on graph-free inputs record no graph") {
    auto x = Tensor::from_data({4}, {1.0, -2.0, 3.0, -4.0}, false);
    auto y = softplus(scale(x, 2.0));
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node()->parents.empty());
}

TEST_CASE("detach cuts the graph") {
    auto x = Tensor::from_data({1}, {5.0}, true);
    auto y = mul(x, x);
    auto z = mul(y.detach(true), Tensor::scalar(2.0));
    z.backward();
    // x receives nothing; the detached leaf got the gradient instead.
    CHECK(std::as_const(x).grad().empty());
}

TEST_CASE("deep chain gradients stay exact") {
    auto x = Tensor::from_data({1}, {1.5}, true);
    Tensor t = x;
    for (int i = 0; i < 64; ++i) t = scale(t, 0.9);
    t.backward();
    CHECK(x.grad()[0] == Catch::Approx(std::pow(0.9, 64)).epsilon(1e-12));
}

TEST_CASE("diamond graph sums both paths") {
    auto x = Tensor::from_data({1}, {2.0}, true);
    auto a = scale(x, 3.0);
    auto b = mul(x, x);
    auto y = add(a, b);
    y.backward();
    CHECK(x.grad()[0] == Catch::Approx(3.0 + 4.0));
}

TEST_CASE("mixed grad and no-grad operands propagate only where needed") {
    Rng rng(90);
    auto x = random_tensor(rng, {2, 2}, true);
    auto frozen = random_tensor(rng, {2, 2}, false);
    auto y = sum_all(mul(x, frozen));
    y.backward();
    REQUIRE(x.grad().size() == 4);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(x.grad()[i] == Catch::Approx(frozen.data()[i]));
    CHECK(std::as_const(frozen).grad().empty());
}

TEST_CASE("reshape is gradient-transparent") {
    Rng rng(91);
    auto x = random_tensor(rng, {2, 3, 2, 2}, true);
    auto flat = reshape(x, {2, 12});
    sum_all(flat).backward();
    for (const double g : x.grad()) CHECK(g == Catch::Approx(1.0));
}
