#include <doctest.h>

#include <string>

#include "pcsa/gradcheck.hpp"
#include "pcsa/ops.hpp"
#include "pcsa/tape.hpp"

using namespace pcsa;

namespace {

// y = x^2 whose backward forgets the factor 2.
TensorD broken_square(const TensorD& x) {
    TensorD out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out.data()[i] = x.data()[i] * x.data()[i];
    if (Tape* tape = detail::recording_tape<double>({&x})) {
        tape->push<double>("broken_square", out.impl(), [xi = x.impl()](const std::vector<double>& g) {
            auto& gx = detail::grad_buffer(*xi);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * xi->data[i];
        });
    }
    return out;
}

}  // namespace

TEST_CASE("relative error metric") {
    const std::vector<double> a{3, 4}, b{3, 4}, c{0, 0}, z{1e-14, 0};
    CHECK(relative_error(a, b) == 0.0);
    CHECK(relative_error(a, c) == doctest::Approx(1.0));
    CHECK(relative_error(z, c) == doctest::Approx(1e-14));
}

TEST_CASE("a broken backward rule fails and the report names the op") {
    Rng rng(1);
    TensorD x = TensorD::uniform({5}, 0.5, 1.5, rng);
    const auto results = check_gradients("op.broken_square", [&] { return sum(broken_square(x)); }, {{"x", x}});
    REQUIRE(results.size() == 1);
    CHECK_FALSE(results[0].passed);
    CHECK(results[0].group.find("broken_square") != std::string::npos);
    CHECK(results[0].rel_error == doctest::Approx(0.5).epsilon(1e-4));
}

TEST_CASE("a correct composition passes and leaves inputs untouched") {
    Rng rng(2);
    TensorD x = TensorD::uniform({2, 3, 4, 4}, -1, 1, rng);
    const TensorD before = x.clone();
    const auto results = check_gradients("op.composite", [&] { return sum(mul(sigmoid(x), x)); }, {{"x", x}});
    REQUIRE(results.size() == 1);
    CHECK(results[0].passed);
    CHECK(results[0].rel_error <= 1e-6);
    CHECK(same_values(x, before));
}

TEST_CASE("op and block suites pass") {
    for (auto scope : {GradCheckScope::op, GradCheckScope::block}) {
        GradCheckOptions o;
        o.scope = scope;
        const auto results = run_gradcheck_suite(o);
        CHECK(results.size() > 10);
        for (const auto& r : results) {
            CAPTURE(r.group);
            CHECK(r.passed);
            CHECK(r.rel_error <= 1e-3);
        }
    }
}
