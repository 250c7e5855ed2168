#include <doctest.h>

#include <cmath>
#include <limits>
#include <thread>

#include "naive.hpp"
#include "pcsa/gradcheck.hpp"
#include "pcsa/ops.hpp"
#include "pcsa/tape.hpp"

using namespace pcsa;

namespace {

// Dense correlation with zero padding and stride; W is [O, I, k, k].
naive::Img naive_conv(const naive::Img& x, const TensorD& w, const TensorD& bias, int stride, int pad) {
    const auto O = w.dim(0), k = w.dim(2);
    const auto oh = (x.h + 2 * pad - k) / stride + 1, ow = (x.w + 2 * pad - k) / stride + 1;
    naive::Img o(x.n, O, oh, ow);
    for (std::int64_t b = 0; b < x.n; ++b)
        for (std::int64_t oc = 0; oc < O; ++oc)
            for (std::int64_t y = 0; y < oh; ++y)
                for (std::int64_t i = 0; i < ow; ++i) {
                    double s = bias.data()[static_cast<std::size_t>(oc)];
                    for (std::int64_t ic = 0; ic < x.c; ++ic)
                        for (std::int64_t p = 0; p < k; ++p)
                            for (std::int64_t q = 0; q < k; ++q)
                                s += w.data()[static_cast<std::size_t>(((oc * x.c + ic) * k + p) * k + q)] *
                                     x.at0(b, ic, y * stride - pad + p, i * stride - pad + q);
                    o(b, oc, y, i) = s;
                }
    return o;
}

}  // namespace

TEST_CASE("broadcast add and mul on singleton axes") {
    const TensorD a({2, 1}, std::vector<double>{1, 2});
    const TensorD b({1, 3}, std::vector<double>{10, 20, 30});
    const TensorD s = add(a, b);
    CHECK(s.shape() == Shape{2, 3});
    CHECK(naive::flat(s) == std::vector<double>{11, 21, 31, 12, 22, 32});
    CHECK(naive::flat(mul(a, b)) == std::vector<double>{10, 20, 30, 20, 40, 60});
    CHECK_THROWS_AS(add(TensorD({2, 3}), TensorD({3, 2})), ShapeError);
}

TEST_CASE("gradients of a small expression match the closed form") {
    // f = sum(x * x * y) with y broadcast over rows: df/dx = 2xy, df/dy = sum_rows x^2
    TensorD x({2, 2}, std::vector<double>{1, -2, 3, 0.5});
    TensorD y({1, 2}, std::vector<double>{4, -1});
    x.set_requires_grad(true);
    y.set_requires_grad(true);
    {
        Tape tape;
        tape.backward(sum(mul(mul(x, x), y)));
    }
    CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{8, 4, 24, -1});
    CHECK(std::vector<double>(y.grad().begin(), y.grad().end()) == std::vector<double>{10, 4.25});
}

TEST_CASE("a leaf used twice accumulates both paths") {
    TensorD x({3}, std::vector<double>{1, 2, 3});
    x.set_requires_grad(true);
    Tape tape;
    tape.backward(sum(add(scale(x, 2.0), x)));
    for (double g : x.grad()) CHECK(g == 3.0);
}

TEST_CASE("tape misuse is reported") {
    TensorD x({2}, std::vector<double>{1, 2});
    x.set_requires_grad(true);
    {
        Tape tape;
        const TensorD y = mul(x, x);
        CHECK_THROWS_AS(tape.backward(y), AutogradError);  // not a scalar
        const TensorD l = sum(y);
        tape.backward(l);
        CHECK_THROWS_AS(tape.backward(l), AutogradError);  // second backward
    }
    {
        Tape tape;
        CHECK_THROWS_AS(tape.backward(sum(TensorD({2}, 1.0))), AutogradError);  // nothing requires grad
    }
}

TEST_CASE("NoGradGuard suspends recording") {
    TensorD x({2}, std::vector<double>{1, 2});
    x.set_requires_grad(true);
    Tape tape;
    {
        NoGradGuard guard;
        (void)mul(x, x);
    }
    CHECK(tape.size() == 0);
    (void)mul(x, x);
    CHECK(tape.size() == 1);
}

TEST_CASE("tapes are thread local") {
    Tape tape;
    Tape* seen = &tape;
    std::thread([&] { seen = Tape::active(); }).join();
    CHECK(seen == nullptr);
    CHECK(Tape::active() == &tape);
}

TEST_CASE("non-finite outputs name the op") {
    const TensorD a({2}, std::vector<double>{1, 1});
    const TensorD z({2}, std::vector<double>{0, 1});
    try {
        (void)div(a, z);
        FAIL("expected NonFiniteError");
    } catch (const NonFiniteError& e) {
        CHECK(e.op() == "div");
    }
}

TEST_CASE("conv2d matches the direct loop, including stride 2 floor sizing") {
    Rng rng(7);
    for (int stride : {1, 2}) {
        for (int k : {1, 3}) {
            const TensorD x = TensorD::uniform({2, 3, 7, 6}, -1, 1, rng);
            const TensorD w = TensorD::uniform({5, 3, k, k}, -1, 1, rng);
            const TensorD b = TensorD::uniform({5}, -1, 1, rng);
            const int pad = k / 2;
            const TensorD got = conv2d(x, w, b, stride, pad);
            const auto want = naive_conv(naive::from(x), w, b, stride, pad);
            REQUIRE(got.shape() == Shape{2, 5, want.h, want.w});
            CHECK(naive::max_err(got, want) <= 1e-12);
        }
    }
    // 16 -> 8 with k3 s2 p1 although (16 + 2 - 3) / 2 is not an integer
    const TensorD x16 = TensorD::uniform({1, 1, 16, 16}, -1, 1, rng);
    CHECK(conv2d(x16, TensorD({1, 1, 3, 3}, 1.0), TensorD({1}), 2, 1).shape() == Shape{1, 1, 8, 8});
}

TEST_CASE("depthwise conv matches the direct loop") {
    Rng rng(8);
    const TensorD x = TensorD::uniform({2, 4, 6, 5}, -1, 1, rng);
    const TensorD w = TensorD::uniform({4, 1, 5, 5}, -1, 1, rng);
    const TensorD b = TensorD::uniform({4}, -1, 1, rng);
    CHECK(naive::max_err(depthwise_conv2d(x, w, b, 2), naive::depthwise(naive::from(x), naive::flat(w), naive::flat(b), 5)) <=
          1e-12);
}

TEST_CASE("softmax, pooling and channel_norm") {
    Rng rng(9);
    const TensorD x = TensorD::uniform({2, 3, 4, 5}, -3, 3, rng);
    const TensorD s = softmax(x, 1);
    for (std::int64_t b = 0; b < 2; ++b)
        for (std::int64_t y = 0; y < 4; ++y)
            for (std::int64_t i = 0; i < 5; ++i) {
                double t = 0;
                for (std::int64_t c = 0; c < 3; ++c) t += s.at(b, c, y, i);
                CHECK(std::abs(t - 1.0) < 1e-12);
            }
    const TensorD big({1, 2, 1, 1}, std::vector<double>{1000, 0});
    CHECK(softmax(big, 1).data()[0] == 1.0);

    const TensorD g = global_avg_pool(x);
    CHECK(g.shape() == Shape{2, 3, 1, 1});
    CHECK(std::abs(g.data()[4] - naive::gap(naive::from(x), 1, 1)) < 1e-12);

    const TensorD w({3}, std::vector<double>{1, 2, 3}), bias({3}, std::vector<double>{0, 1, -1});
    const TensorD n = channel_norm(x, w, bias);
    for (std::int64_t y = 0; y < 4; ++y) {
        double mu = 0, var = 0;
        for (std::int64_t c = 0; c < 3; ++c) mu += x.at(1, c, y, 2) / 3;
        for (std::int64_t c = 0; c < 3; ++c) var += (x.at(1, c, y, 2) - mu) * (x.at(1, c, y, 2) - mu) / 3;
        for (std::int64_t c = 0; c < 3; ++c) {
            const double want = (x.at(1, c, y, 2) - mu) / std::sqrt(var + 1e-5) * w.data()[c] + bias.data()[c];
            CHECK(std::abs(n.at(1, c, y, 2) - want) < 1e-12);
        }
    }
}

TEST_CASE("layout ops") {
    const TensorD x({1, 1, 2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    CHECK(naive::flat(transpose_hw(x)) == std::vector<double>{1, 4, 2, 5, 3, 6});
    CHECK(naive::flat(pad2d(x, 1, 0)) == std::vector<double>{0, 0, 0, 1, 2, 3, 4, 5, 6, 0, 0, 0});
    const TensorD u = upsample_nearest2x(x);
    CHECK(u.shape() == Shape{1, 1, 4, 6});
    CHECK(u.at(0, 0, 3, 5) == 6);
    CHECK(u.at(0, 0, 1, 2) == 2);
    const TensorD y({1, 2, 1, 1}, std::vector<double>{7, 8});
    const TensorD c = concat<double>({x.reshaped_copy({1, 6, 1, 1}), y}, 1);
    CHECK(c.shape() == Shape{1, 8, 1, 1});
    auto parts = split_channels(c);
    CHECK(naive::flat(parts[1]) == std::vector<double>{5, 6, 7, 8});
}

TEST_CASE("handles alias, clone copies") {
    TensorF a({3}, 1.0f);
    TensorF b = a;
    b.data()[0] = 5.0f;
    CHECK(a.data()[0] == 5.0f);
    TensorF c = a.clone();
    c.data()[1] = 9.0f;
    CHECK(a.data()[1] == 1.0f);
}

TEST_CASE("finite differences of a quadratic") {
    const TensorD x({3}, std::vector<double>{1, -2, 0.5});
    const TensorD g = finite_diff_grad([](const TensorD& t) {
        double s = 0;
        for (double v : t.data()) s += v * v * v;
        return s;
    }, x);
    // d/dx x^3 = 3x^2; central differences are exact for cubics up to eps^2 terms
    CHECK(std::abs(g.data()[0] - 3.0) < 1e-7);
    CHECK(std::abs(g.data()[1] - 12.0) < 1e-7);
    CHECK(std::abs(g.data()[2] - 0.75) < 1e-7);
}
