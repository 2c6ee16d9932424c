#include <catch2/catch_amalgamated.hpp>

#include "srforge/nn.hpp"
#include "testutil.hpp"

using namespace srforge;
using namespace srforge::nn;
using testutil::gradient_rel_error;
using testutil::random_tensor;
using testutil::weighted_sum;

namespace {
constexpr double kGradTol = 1e-4;
}

TEST_CASE("conv2d counts overlaps for all-ones kernel") {
    // 3x3 ones input, 3x3 ones kernel, pad 1: center sees 9 taps, corners 4.
    auto x = Tensor::from_data({1, 1, 3, 3}, std::vector<double>(9, 1.0));
    auto w = Tensor::from_data({1, 1, 3, 3}, std::vector<double>(9, 1.0));
    auto b = Tensor::zeros({1});
    auto y = conv2d(x, w, b, 1, 1);
    REQUIRE(y.shape() == Shape{1, 1, 3, 3});
    CHECK(y.data()[4] == Catch::Approx(9.0));
    CHECK(y.data()[0] == Catch::Approx(4.0));
    CHECK(y.data()[2] == Catch::Approx(4.0));
    CHECK(y.data()[1] == Catch::Approx(6.0));
}

TEST_CASE("conv2d identity 1x1 kernel reproduces input") {
    Rng rng(1);
    auto x = random_tensor(rng, {2, 3, 4, 5});
    std::vector<double> wv(9, 0.0);
    wv[0] = 1.0; wv[4] = 1.0; wv[8] = 1.0; // (o,c) diagonal for 1x1 kernels
    auto w = Tensor::from_data({3, 3, 1, 1}, std::move(wv));
    auto b = Tensor::zeros({3});
    auto y = conv2d(x, w, b, 1, 0);
    REQUIRE(y.shape() == x.shape());
    for (std::size_t i = 0; i < y.data().size(); ++i)
        REQUIRE(y.data()[i] == Catch::Approx(x.data()[i]).margin(1e-15));
}

TEST_CASE("conv2d strided output size") {
    auto x = Tensor::zeros({1, 2, 8, 8});
    Rng rng(2);
    auto w = random_tensor(rng, {4, 2, 3, 3});
    auto b = Tensor::zeros({4});
    auto y = conv2d(x, w, b, 2, 1);
    REQUIRE(y.shape() == Shape{1, 4, 4, 4});
}

TEST_CASE("conv2d rejects incompatible shapes") {
    auto x = Tensor::zeros({1, 3, 4, 4});
    auto w = Tensor::zeros({2, 4, 3, 3});
    auto b = Tensor::zeros({2});
    CHECK_THROWS_AS(conv2d(x, w, b, 1, 1), Error);
}

TEST_CASE("conv2d gradients match finite differences") {
    Rng rng(3);
    for (int trial = 0; trial < 4; ++trial) {
        const int stride = trial % 2 + 1;
        auto x = random_tensor(rng, {2, 3, 5, 5}, true);
        auto w = random_tensor(rng, {4, 3, 3, 3}, true);
        auto b = random_tensor(rng, {4}, true);
        auto forward = [&]() { return weighted_sum(conv2d(x, w, b, stride, 1)); };
        CHECK(gradient_rel_error(x, forward) < kGradTol);
        CHECK(gradient_rel_error(w, forward) < kGradTol);
        CHECK(gradient_rel_error(b, forward) < kGradTol);
    }
}

TEST_CASE("dense identity and zero weight") {
    Rng rng(4);
    auto x = random_tensor(rng, {3, 4});
    std::vector<double> eye(16, 0.0);
    for (int i = 0; i < 4; ++i) eye[std::size_t(i) * 4 + i] = 1.0;
    auto w = Tensor::from_data({4, 4}, std::move(eye));
    auto b = Tensor::zeros({4});
    auto y = dense(x, w, b);
    for (std::size_t i = 0; i < y.data().size(); ++i)
        REQUIRE(y.data()[i] == Catch::Approx(x.data()[i]));

    auto w0 = Tensor::zeros({2, 4});
    auto b0 = Tensor::from_data({2}, {0.5, -1.5});
    auto y0 = dense(x, w0, b0);
    for (int n = 0; n < 3; ++n) {
        CHECK(y0.data()[std::size_t(n) * 2] == Catch::Approx(0.5));
        CHECK(y0.data()[std::size_t(n) * 2 + 1] == Catch::Approx(-1.5));
    }
}

TEST_CASE("dense gradients match finite differences") {
    Rng rng(5);
    auto x = random_tensor(rng, {3, 6}, true);
    auto w = random_tensor(rng, {4, 6}, true);
    auto b = random_tensor(rng, {4}, true);
    auto forward = [&]() { return weighted_sum(dense(x, w, b)); };
    CHECK(gradient_rel_error(x, forward) < kGradTol);
    CHECK(gradient_rel_error(w, forward) < kGradTol);
    CHECK(gradient_rel_error(b, forward) < kGradTol);
}

TEST_CASE("leaky relu values and gradient") {
    auto x = Tensor::from_data({1, 1, 1, 3}, {-1.0, 0.0, 2.0});
    auto y = leaky_relu(x, 0.2);
    CHECK(y.data()[0] == Catch::Approx(-0.2));
    CHECK(y.data()[1] == Catch::Approx(0.0));
    CHECK(y.data()[2] == Catch::Approx(2.0));

    Rng rng(6);
    // Keep values away from the kink so finite differences are valid.
    auto t = random_tensor(rng, {2, 3, 4, 4}, true);
    for (double& v : t.data())
        if (std::abs(v) < 1e-3) v = 0.5;
    auto forward = [&]() { return weighted_sum(leaky_relu(t, 0.2)); };
    CHECK(gradient_rel_error(t, forward) < kGradTol);
}

TEST_CASE("prelu learns per-channel slopes") {
    auto x = Tensor::from_data({1, 2, 1, 2}, {-1.0, 1.0, -2.0, 4.0});
    auto a = Tensor::from_data({2}, {0.1, 0.5});
    auto y = prelu(x, a);
    CHECK(y.data()[0] == Catch::Approx(-0.1));
    CHECK(y.data()[1] == Catch::Approx(1.0));
    CHECK(y.data()[2] == Catch::Approx(-1.0));
    CHECK(y.data()[3] == Catch::Approx(4.0));

    Rng rng(7);
    auto t = random_tensor(rng, {2, 3, 4, 4}, true);
    for (double& v : t.data())
        if (std::abs(v) < 1e-3) v = 0.5;
    auto slopes = random_tensor(rng, {3}, true, 0.05, 0.5);
    auto forward = [&]() { return weighted_sum(prelu(t, slopes)); };
    CHECK(gradient_rel_error(t, forward) < kGradTol);
    CHECK(gradient_rel_error(slopes, forward) < kGradTol);
}

TEST_CASE("batch norm standardizes per channel in train mode") {
    Rng rng(8);
    auto x = random_tensor(rng, {4, 3, 5, 5});
    auto gamma = Tensor::from_data({3}, {1.0, 1.0, 1.0}, false);
    auto beta = Tensor::zeros({3});
    BatchNormBuffers buffers;
    buffers.running_mean = std::make_shared<std::vector<double>>(3, 0.0);
    buffers.running_var = std::make_shared<std::vector<double>>(3, 1.0);
    auto y = batch_norm(x, gamma, beta, buffers, true);
    for (int c = 0; c < 3; ++c) {
        double mean = 0.0;
        for (int n = 0; n < 4; ++n) {
            const double* row = y.data().data() + std::size_t((n * 3 + c) * 25);
            for (int i = 0; i < 25; ++i) mean += row[i];
        }
        mean /= 100.0;
        CHECK(std::abs(mean) < 1e-6);
    }
    // Running statistics moved toward the batch statistics.
    CHECK((*buffers.running_mean)[0] != 0.0);
}

TEST_CASE("batch norm eval mode applies stored affine map") {
    auto x = Tensor::from_data({1, 1, 1, 2}, {1.0, 3.0});
    auto gamma = Tensor::from_data({1}, {2.0});
    auto beta = Tensor::from_data({1}, {0.5});
    BatchNormBuffers buffers;
    buffers.running_mean = std::make_shared<std::vector<double>>(1, 1.0);
    buffers.running_var = std::make_shared<std::vector<double>>(1, 4.0);
    auto y = batch_norm(x, gamma, beta, buffers, false, 0.1, 0.0);
    CHECK(y.data()[0] == Catch::Approx(0.5));
    CHECK(y.data()[1] == Catch::Approx(2.0 * (3.0 - 1.0) / 2.0 + 0.5));
}

TEST_CASE("batch norm rejects batch of one in train mode") {
    auto x = Tensor::zeros({1, 2, 3, 3});
    auto gamma = Tensor::zeros({2});
    auto beta = Tensor::zeros({2});
    BatchNormBuffers buffers;
    buffers.running_mean = std::make_shared<std::vector<double>>(2, 0.0);
    buffers.running_var = std::make_shared<std::vector<double>>(2, 1.0);
    CHECK_THROWS_AS(batch_norm(x, gamma, beta, buffers, true), Error);
}

TEST_CASE("batch norm gradients match finite differences") {
    Rng rng(9);
    auto x = random_tensor(rng, {3, 2, 4, 4}, true);
    auto gamma = random_tensor(rng, {2}, true, 0.5, 1.5);
    auto beta = random_tensor(rng, {2}, true);
    auto forward = [&]() {
        BatchNormBuffers buffers;
        buffers.running_mean = std::make_shared<std::vector<double>>(2, 0.0);
        buffers.running_var = std::make_shared<std::vector<double>>(2, 1.0);
        return weighted_sum(batch_norm(x, gamma, beta, buffers, true));
    };
    CHECK(gradient_rel_error(x, forward) < kGradTol);
    CHECK(gradient_rel_error(gamma, forward) < kGradTol);
    CHECK(gradient_rel_error(beta, forward) < kGradTol);
}

TEST_CASE("pixel shuffle shape rule and index placement") {
    Rng rng(10);
    auto x = random_tensor(rng, {1, 4, 2, 2});
    auto y = pixel_shuffle(x, 2);
    REQUIRE(y.shape() == Shape{1, 1, 4, 4});
    // out[0,0,h*2+i,w*2+j] == in[0, i*2+j, h, w]
    for (int h = 0; h < 2; ++h)
        for (int w = 0; w < 2; ++w)
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j)
                    REQUIRE(y.data()[std::size_t((h * 2 + i) * 4 + w * 2 + j)] ==
                            x.data()[std::size_t(((i * 2 + j) * 2 + h) * 2 + w)]);
}

TEST_CASE("pixel shuffle rejects channel count not divisible by r^2") {
    auto x = Tensor::zeros({1, 3, 2, 2});
    CHECK_THROWS_AS(pixel_shuffle(x, 2), Error);
}

TEST_CASE("pixel unshuffle inverts pixel shuffle") {
    Rng rng(11);
    auto x = random_tensor(rng, {2, 8, 3, 5});
    auto y = pixel_unshuffle(pixel_shuffle(x, 2), 2);
    REQUIRE(y.shape() == x.shape());
    REQUIRE(y.data() == x.data());

    auto z = pixel_shuffle(pixel_unshuffle(x, 1), 1);
    REQUIRE(z.data() == x.data());
}

TEST_CASE("pixel shuffle gradient matches finite differences") {
    Rng rng(12);
    auto x = random_tensor(rng, {2, 8, 3, 3}, true);
    auto forward = [&]() { return weighted_sum(pixel_shuffle(x, 2)); };
    CHECK(gradient_rel_error(x, forward) < kGradTol);
}

TEST_CASE("nearest interpolation duplicates pixels") {
    auto x = Tensor::from_data({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    auto y = interpolate_nearest(x, 2);
    REQUIRE(y.shape() == Shape{1, 1, 4, 4});
    CHECK(y.data()[0] == 1.0);
    CHECK(y.data()[1] == 1.0);
    CHECK(y.data()[5] == 1.0);
    CHECK(y.data()[2] == 2.0);
    CHECK(y.data()[15] == 4.0);
}

TEST_CASE("bilinear interpolation preserves constants and has exact gradients") {
    auto c = Tensor::from_data({1, 2, 3, 3}, std::vector<double>(18, 0.7));
    auto y = interpolate_bilinear(c, 2);
    for (const double v : y.data()) REQUIRE(v == Catch::Approx(0.7).margin(1e-15));

    Rng rng(13);
    auto x = random_tensor(rng, {2, 2, 3, 4}, true);
    auto forward = [&]() { return weighted_sum(interpolate_bilinear(x, 2)); };
    CHECK(gradient_rel_error(x, forward) < kGradTol);

    auto xn = random_tensor(rng, {1, 2, 3, 3}, true);
    auto forward_nearest = [&]() { return weighted_sum(interpolate_nearest(xn, 3)); };
    CHECK(gradient_rel_error(xn, forward_nearest) < kGradTol);
}

TEST_CASE("spectral norm converges to the dominant singular value") {
    // diag(3, 1): sigma = 3.
    auto w = Tensor::from_data({2, 2}, {3.0, 0.0, 0.0, 1.0}, true);
    auto u = std::make_shared<std::vector<double>>(std::vector<double>{0.6, 0.8});
    for (int i = 0; i < 20; ++i) spectral_normalize(w, u, true);
    CHECK(spectral_sigma(w, *u) == Catch::Approx(3.0).margin(1e-6));
}

TEST_CASE("spectral norm of an orthogonal matrix is the identity map") {
    const double c = std::cos(0.3), s = std::sin(0.3);
    auto w = Tensor::from_data({2, 2}, {c, -s, s, c});
    auto u = std::make_shared<std::vector<double>>(std::vector<double>{1.0, 0.0});
    auto y = spectral_normalize(w, u, true);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(y.data()[i] == Catch::Approx(w.data()[i]).margin(1e-12));
}

TEST_CASE("spectral norm sigma tracks an SVD oracle on a random matrix") {
    Rng rng(1);
    auto w = random_tensor(rng, {16, 32});
    auto u = std::make_shared<std::vector<double>>(16, 0.0);
    Rng urng(101);
    for (double& x : *u) x = urng.normal();
    for (int i = 0; i < 5; ++i) spectral_normalize(w, u, true);
    const double sigma = spectral_sigma(w, *u);

    // Oracle: power iteration on W^T W from an independent start, run to
    // convergence (equivalent to the top singular value of the SVD).
    std::vector<double> v(32, 1.0);
    const auto& wd = w.data();
    for (int it = 0; it < 3000; ++it) {
        std::vector<double> wv(16, 0.0);
        for (int r = 0; r < 16; ++r)
            for (int cidx = 0; cidx < 32; ++cidx) wv[std::size_t(r)] += wd[std::size_t(r * 32 + cidx)] * v[std::size_t(cidx)];
        std::vector<double> wtwv(32, 0.0);
        for (int r = 0; r < 16; ++r)
            for (int cidx = 0; cidx < 32; ++cidx) wtwv[std::size_t(cidx)] += wd[std::size_t(r * 32 + cidx)] * wv[std::size_t(r)];
        double norm = 0.0;
        for (const double x : wtwv) norm += x * x;
        norm = std::sqrt(norm);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = wtwv[i] / norm;
    }
    std::vector<double> wv(16, 0.0);
    for (int r = 0; r < 16; ++r)
        for (int cidx = 0; cidx < 32; ++cidx) wv[std::size_t(r)] += wd[std::size_t(r * 32 + cidx)] * v[std::size_t(cidx)];
    double oracle = 0.0;
    for (const double x : wv) oracle += x * x;
    oracle = std::sqrt(oracle);

    CHECK(std::abs(sigma - oracle) / oracle < 1e-2);
}

TEST_CASE("spectral norm gradient matches finite differences") {
    Rng rng(16);
    auto w = random_tensor(rng, {4, 6}, true);
    auto u = std::make_shared<std::vector<double>>(4, 0.0);
    Rng urng(17);
    for (double& x : *u) x = urng.normal();
    for (int i = 0; i < 30; ++i) spectral_normalize(w, u, true); // settle u
    auto forward = [&]() { return weighted_sum(spectral_normalize(w, u, false)); };
    CHECK(gradient_rel_error(w, forward) < kGradTol);
}

TEST_CASE("adam first step and zero-gradient behavior") {
    // Single scalar, g = 1, lr = 0.1: bias-corrected ratio is 1, so the first
    // update is -0.1 up to epsilon.
    auto p = Tensor::from_data({1}, {0.0}, true);
    std::vector<Parameter> params{{"p", p}};
    Adam opt;
    p.grad()[0] = 1.0;
    opt.step(params, 0.1);
    CHECK(p.data()[0] == Catch::Approx(-0.1).margin(1e-8));

    auto q = Tensor::from_data({1}, {2.5}, true);
    std::vector<Parameter> params2{{"q", q}};
    Adam opt2;
    q.grad()[0] = 0.0;
    opt2.step(params2, 0.1);
    CHECK(q.data()[0] == Catch::Approx(2.5).margin(1e-15));
}

TEST_CASE("adam descends a quadratic") {
    auto p = Tensor::from_data({1}, {1.0}, true);
    std::vector<Parameter> params{{"p", p}};
    Adam opt;
    double prev = 1.0;
    for (int i = 0; i < 10; ++i) {
        p.zero_grad();
        auto loss = mul(p, p);
        loss.backward();
        opt.step(params, 0.05);
        const double f = p.data()[0] * p.data()[0];
        CHECK(f < prev);
        prev = f;
    }
}

TEST_CASE("adam reports the diverging parameter by name") {
    auto p = Tensor::from_data({1}, {0.0}, true);
    std::vector<Parameter> params{{"layer3.weight", p}};
    Adam opt;
    p.grad()[0] = std::numeric_limits<double>::quiet_NaN();
    try {
        opt.step(params, 0.1);
        FAIL("expected divergence error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("layer3.weight") != std::string::npos);
    }
}

TEST_CASE("elementwise and reduction gradients match finite differences") {
    Rng rng(18);
    auto x = random_tensor(rng, {2, 3, 3, 3}, true);
    auto y = random_tensor(rng, {2, 3, 3, 3});
    for (double& v : x.data())
        if (std::abs(v) < 1e-3) v = 0.4; // avoid |.| kink

    auto fabs = [&]() { return sum_all(nn::abs(sub(x, y))); };
    CHECK(gradient_rel_error(x, fabs) < kGradTol);

    auto fsp = [&]() { return mean_all(softplus(x)); };
    CHECK(gradient_rel_error(x, fsp) < kGradTol);

    auto fsg = [&]() { return mean_all(sigmoid(x)); };
    CHECK(gradient_rel_error(x, fsg) < kGradTol);

    auto fmix = [&]() { return weighted_sum(mul(x, add(x, scale(x, 0.5)))); };
    CHECK(gradient_rel_error(x, fmix) < kGradTol);

    auto s = Tensor::scalar(0.25, true);
    auto fbroad = [&]() { return weighted_sum(sub_broadcast(x, s)); };
    CHECK(gradient_rel_error(x, fbroad) < kGradTol);
    CHECK(gradient_rel_error(s, fbroad) < kGradTol);

    auto fcat = [&]() { return weighted_sum(concat_channels({x, scale(x, 2.0)})); };
    CHECK(gradient_rel_error(x, fcat) < kGradTol);
}

TEST_CASE("determinism: identical seeds give bit-identical op outputs") {
    auto run = []() {
        Rng rng(99);
        auto x = random_tensor(rng, {2, 4, 6, 6}, true);
        auto w = random_tensor(rng, {8, 4, 3, 3}, true);
        auto b = random_tensor(rng, {8}, true);
        auto y = leaky_relu(conv2d(x, w, b, 1, 1), 0.2);
        return y.data();
    };
    REQUIRE(run() == run());
}
