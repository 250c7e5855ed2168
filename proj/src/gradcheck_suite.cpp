#include <cmath>
#include <map>
#include <stdexcept>

#include "pcsa/attention.hpp"
#include "pcsa/gradcheck.hpp"
#include "pcsa/losses.hpp"
#include "pcsa/network.hpp"
#include "pcsa/ops.hpp"
#include "pcsa/random.hpp"
#include "pcsa/tape.hpp"

namespace pcsa {

namespace {

using Leaves = std::vector<std::pair<std::string, TensorD>>;

// Reduces an output to a scalar through a fixed random projection so that
// every output element contributes with a distinct weight.
class Projector {
public:
    explicit Projector(Rng& rng) : rng_(rng) {}

    TensorD operator()(const TensorD& y) {
        auto it = cache_.find(y.shape());
        if (it == cache_.end()) it = cache_.emplace(y.shape(), TensorD::uniform(y.shape(), -1.0, 1.0, rng_)).first;
        return sum(mul(y, it->second));
    }

private:
    Rng& rng_;
    std::map<Shape, TensorD> cache_;
};

// Uniform values whose magnitude is at least `gap`, away from the kinks of
// relu and abs.
TensorD away_from_zero(const Shape& shape, double gap, Rng& rng) {
    TensorD t = TensorD::uniform(shape, gap, 1.0, rng);
    for (double& v : t.data()) {
        if (rng.uniform01() < 0.5) v = -v;
    }
    return t;
}

void append(std::vector<GradCheckResult>& out, std::vector<GradCheckResult> more) {
    out.insert(out.end(), more.begin(), more.end());
}

template <typename P>
Leaves leaves_of(P& params, const std::string& prefix) {
    Leaves out;
    params.visit(prefix, [&](const std::string& name, TensorD& t) { out.emplace_back(name, t); });
    return out;
}

// Replaces every tensor with fresh uniform values so that zero-initialized
// biases and scales do not hide gradient paths.
template <typename P>
void randomize(P& params, Rng& rng, double bound) {
    params.visit("", [&](const std::string&, TensorD& t) {
        for (double& v : t.data()) v = rng.uniform(-bound, bound);
    });
}

std::vector<GradCheckResult> op_suite(const GradCheckOptions& o) {
    Rng rng(derive_seed(o.seed, 0x6F70));
    Projector proj(rng);
    std::vector<GradCheckResult> r;
    auto check = [&](const std::string& op, const std::function<TensorD()>& f, Leaves leaves) {
        append(r, check_gradients("op." + op, f, std::move(leaves), o.tolerance, o.eps));
    };
    auto u = [&](const Shape& s, double lo = -1.0, double hi = 1.0) { return TensorD::uniform(s, lo, hi, rng); };

    {
        TensorD a = u({2, 3, 4, 5}), b = u({1, 3, 1, 5});
        check("add", [&] { return proj(add(a, b)); }, {{"a", a}, {"b", b}});
        check("sub", [&] { return proj(sub(a, b)); }, {{"a", a}, {"b", b}});
        check("mul", [&] { return proj(mul(a, b)); }, {{"a", a}, {"b", b}});
        TensorD d = u({2, 1, 4, 1}, 0.5, 1.5);
        check("div", [&] { return proj(div(a, d)); }, {{"a", a}, {"b", d}});
        check("scale", [&] { return proj(scale(a, 1.7)); }, {{"x", a}});
        check("add_scalar", [&] { return proj(add_scalar(a, -0.3)); }, {{"x", a}});
        check("sigmoid", [&] { return proj(sigmoid(scale(a, 4.0))); }, {{"x", a}});
        check("sum", [&] { return scale(sum(mul(a, a)), 0.5); }, {{"x", a}});
        check("mean", [&] { return mean(mul(a, a)); }, {{"x", a}});
        check("reshape", [&] { return proj(reshape(a, {6, 20})); }, {{"x", a}});
        check("transpose_hw", [&] { return proj(transpose_hw(a)); }, {{"x", a}});
        check("pad2d", [&] { return proj(pad2d(a, 2, 1)); }, {{"x", a}});
        check("upsample_nearest2x", [&] { return proj(upsample_nearest2x(a)); }, {{"x", a}});
        check("global_avg_pool", [&] { return proj(global_avg_pool(a)); }, {{"x", a}});
        check("softmax", [&] { return proj(softmax(scale(a, 3.0), 1)); }, {{"x", a}});
    }
    {
        TensorD a = away_from_zero({2, 3, 4, 5}, 0.05, rng);
        check("relu", [&] { return proj(relu(a)); }, {{"x", a}});
        check("abs", [&] { return proj(abs(a)); }, {{"x", a}});
    }
    {
        TensorD a = u({1, 2, 3, 4}), b = u({1, 3, 3, 4});
        check("concat", [&] { return proj(concat<double>({a, b}, 1)); }, {{"a", a}, {"b", b}});
        TensorD c = u({2, 4, 5, 3});
        check("split", [&] {
            auto parts = split(c, {2, 3}, 2);
            return add(proj(parts[0]), scale(proj(parts[1]), 2.0));
        }, {{"x", c}});
        check("split_channels", [&] {
            auto parts = split_channels(c);
            return add(proj(parts[0]), scale(proj(parts[1]), -1.5));
        }, {{"x", c}});
    }
    {
        TensorD x = u({2, 3, 7, 6}), w = u({4, 3, 3, 3}), b = u({4});
        check("conv2d", [&] { return proj(conv2d(x, w, b, 1, 1)); }, {{"x", x}, {"weight", w}, {"bias", b}});
        check("conv2d_stride2", [&] { return proj(conv2d(x, w, b, 2, 1)); }, {{"x", x}, {"weight", w}, {"bias", b}});
        TensorD dw = u({3, 1, 5, 5}), db = u({3});
        check("depthwise_conv2d", [&] { return proj(depthwise_conv2d(x, dw, db, 2)); },
              {{"x", x}, {"weight", dw}, {"bias", db}});
        TensorD nw = u({3}, 0.5, 1.5), nb = u({3});
        check("channel_norm", [&] { return proj(channel_norm(x, nw, nb)); }, {{"x", x}, {"weight", nw}, {"bias", nb}});
    }
    {
        TensorD x = u({2, 4, 6, 5});
        auto sv = StripWeightParams<double>::init(4, 5, StripDirection::vertical, rng);
        randomize(sv, rng, 0.8);
        check("strip_weights", [&] { return proj(strip_weights(x, sv)); },
              {{"x", x}, {"proj_weight", sv.proj_weight}, {"proj_bias", sv.proj_bias}});
        for (int k : {3, 5, 9}) {
            TensorD a = u({2, k}, 0.0, 1.0);
            const std::string ks = "_k" + std::to_string(k);
            check("vsa_apply" + ks, [&] { return proj(vsa_apply(x, a)); }, {{"x", x}, {"a", a}});
            check("hsa_apply" + ks, [&] { return proj(hsa_apply(x, a)); }, {{"x", x}, {"a", a}});
        }
        TensorD h = u({2, 4, 6, 5});
        auto fp = FusionParams<double>::init(4, 4, rng);
        randomize(fp, rng, 0.8);
        Leaves fl = leaves_of(fp, "fusion");
        fl.emplace_back("v", x);
        fl.emplace_back("h", h);
        check("fuse", [&] { return proj(fuse(x, h, fp)); }, fl);

        auto pp = PcsaParams<double>::init(4, 3, 3, 5, 4, rng);
        randomize(pp, rng, 0.8);
        Leaves pl = leaves_of(pp, "pcsa");
        pl.emplace_back("x", x);
        check("pcsa_forward", [&] { return proj(pcsa_forward(x, pp)); }, pl);

        PcsamConfig mc;
        mc.channels = 4;
        mc.group1 = {3, 5, 3};
        mc.group2 = {5, 3, 5};
        auto mp = PcsamParams<double>::init(mc, rng);
        randomize(mp, rng, 0.8);
        Leaves ml = leaves_of(mp, "pcsam");
        ml.emplace_back("x", x);
        check("pcsam_forward", [&] { return proj(pcsam_forward(x, mc, mp)); }, ml);
    }
    {
        TensorD p = u({2, 3, 8, 8}, 0.0, 1.0), g = u({2, 3, 8, 8}, 0.0, 1.0), hz = u({2, 3, 8, 8}, 0.0, 1.0);
        // Keep |p - g| away from zero so the L1 kink is not crossed.
        for (std::size_t i = 0; i < p.numel(); ++i) {
            if (std::abs(p.data()[i] - g.data()[i]) < 0.02) p.data()[i] = g.data()[i] + 0.05;
        }
        check("l1_loss", [&] { return l1_loss(p, g); }, {{"pred", p}});
        const auto ext = CrExtractor<double>::make();
        const LossConfig lc;
        check("cr_loss", [&] { return cr_loss(p, g, hz, ext, lc); }, {{"anchor", p}});
    }
    return r;
}

std::vector<GradCheckResult> block_suite(const GradCheckOptions& o) {
    Rng rng(derive_seed(o.seed, 0x626C));
    Projector proj(rng);
    PcsabConfig cfg;
    cfg.pcsam.channels = 8;
    auto params = PcsabParams<double>::init(cfg, rng);
    randomize(params, rng, 0.5);
    TensorD x = TensorD::uniform({1, 8, 12, 12}, -1.0, 1.0, rng);
    Leaves leaves = leaves_of(params, "pcsab");
    leaves.emplace_back("input", x);
    return check_gradients("block", [&] { return proj(pcsab_forward(x, cfg, params)); }, leaves, o.tolerance, o.eps);
}

std::vector<GradCheckResult> net_suite(const GradCheckOptions& o) {
    Rng rng(derive_seed(o.seed, 0x6E65));
    Projector proj(rng);
    NetworkConfig cfg;
    cfg.base_channels = 4;
    auto params = init_params<double>(cfg, o.seed);
    // Zero-initialized tensors (output conv, fusion expand convs, biases)
    // would hide gradient paths; give them small random values.
    auto ends_with = [](const std::string& s, const std::string& suffix) {
        return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    for (auto& [name, t] : params) {
        if (name.rfind("out_conv.", 0) == 0 || ends_with(name, "bias") || ends_with(name, "fusion.expand_weight")) {
            for (double& v : t.data()) v = rng.uniform(-0.2, 0.2);
        }
    }
    TensorD x = TensorD::uniform({1, 3, 16, 16}, 0.0, 1.0, rng);
    Leaves leaves;
    for (auto& [name, t] : params) leaves.emplace_back(name, t);
    leaves.emplace_back("input", x);
    return check_gradients("net", [&] { return proj(net_forward(x, params, cfg)); }, leaves, o.tolerance, o.eps);
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& options) {
    switch (options.scope) {
        case GradCheckScope::op: return op_suite(options);
        case GradCheckScope::block: return block_suite(options);
        case GradCheckScope::net: return net_suite(options);
    }
    throw std::invalid_argument("unknown gradcheck scope");
}

}  // namespace pcsa
