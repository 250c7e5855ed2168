// Acceptance run: one PASS/FAIL line per criterion. Tolerances are fixed
// here, not read from anywhere else.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "../naive.hpp"
#include "pcsa/attention.hpp"
#include "pcsa/checkpoint.hpp"
#include "pcsa/data.hpp"
#include "pcsa/gradcheck.hpp"
#include "pcsa/metrics.hpp"
#include "pcsa/network.hpp"
#include "pcsa/ppm.hpp"
#include "pcsa/tape.hpp"
#include "pcsa/train.hpp"

using namespace pcsa;

namespace {

constexpr double kOracleTol = 1e-6;
constexpr int kOracleInstances = 24;
constexpr double kGradTol = 1e-3;
constexpr double kMinGainDb = 3.0;
constexpr double kMinAblationDb = 0.5;
constexpr std::array<std::uint64_t, 3> kToySeeds{0, 1, 2};
constexpr std::size_t kToyIterations = 300;
constexpr double kMaxStripRatio = 10.0;
constexpr double kMaxNetRatio = 6.0;
constexpr double kPsnrTol = 1e-4;
constexpr double kSsimTol = 1e-9;
constexpr double kPpmTol = 1.0 / 255.0;

int failures = 0;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void report(int id, bool pass, const std::string& detail) {
    std::printf("criterion %d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
}

std::string fmt(const char* f, double a = 0, double b = 0, double c = 0, double d = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

// ---------------------------------------------------------------------------
// 1. oracle equivalence

template <typename P>
void randomize(P& p, Rng& rng) {
    p.visit("", [&](const std::string&, TensorD& t) {
        for (double& v : t.data()) v = rng.uniform(-0.8, 0.8);
    });
}

std::vector<std::vector<double>> taps_of(const TensorD& a) {
    std::vector<std::vector<double>> out;
    for (std::int64_t b = 0; b < a.dim(0); ++b) out.emplace_back(a.ptr() + b * a.dim(1), a.ptr() + (b + 1) * a.dim(1));
    return out;
}

naive::Fusion fusion_of(const FusionParams<double>& p) {
    return {naive::flat(p.reduce_weight), naive::flat(p.reduce_bias), naive::flat(p.expand_weight),
            naive::flat(p.expand_bias)};
}

naive::Img naive_pcsa(const naive::Img& x, const PcsaParams<double>& p) {
    const naive::Img y = naive::depthwise(x, naive::flat(p.dw_weight), naive::flat(p.dw_bias), p.dw_weight.dim(2));
    const auto av = naive::strip_weights(y, naive::flat(p.vsa.proj_weight), naive::flat(p.vsa.proj_bias));
    const auto ah = naive::strip_weights(y, naive::flat(p.hsa.proj_weight), naive::flat(p.hsa.proj_bias));
    return naive::fuse(naive::vsa(y, av), naive::hsa(y, ah), fusion_of(p.fusion));
}

void criterion_oracles() {
    const auto t0 = Clock::now();
    constexpr std::array<int, 4> ks{1, 3, 5, 7};
    std::array<double, 6> worst{};  // vsa hsa strip_weights fuse pcsa pcsam
    Rng rng(20240);
    for (int i = 0; i < kOracleInstances; ++i) {
        const std::int64_t n = 1 + static_cast<std::int64_t>(rng.below(2));
        const std::int64_t c = 2 * (1 + static_cast<std::int64_t>(rng.below(4)));
        const std::int64_t h = 4 + static_cast<std::int64_t>(rng.below(13));
        const std::int64_t w = 4 + static_cast<std::int64_t>(rng.below(13));
        const int k = ks[static_cast<std::size_t>(i) % 4];
        const int k2 = ks[static_cast<std::size_t>(i + 1) % 4];
        const TensorD x = TensorD::uniform({n, c, h, w}, -1, 1, rng);
        const auto nx = naive::from(x);

        const TensorD a = TensorD::uniform({n, k}, 0, 1, rng);
        worst[0] = std::max(worst[0], naive::max_err(vsa_apply(x, a), naive::vsa(nx, taps_of(a))));
        worst[1] = std::max(worst[1], naive::max_err(hsa_apply(x, a), naive::hsa(nx, taps_of(a))));

        auto sp = StripWeightParams<double>::init(c, k, StripDirection::horizontal, rng);
        randomize(sp, rng);
        const TensorD sw = strip_weights(x, sp);
        const auto want_sw = naive::strip_weights(nx, naive::flat(sp.proj_weight), naive::flat(sp.proj_bias));
        for (std::int64_t b = 0; b < n; ++b)
            for (int t = 0; t < k; ++t)
                worst[2] = std::max(worst[2], std::abs(sw.data()[static_cast<std::size_t>(b * k + t)] -
                                                       want_sw[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)]));

        const TensorD other = TensorD::uniform({n, c, h, w}, -1, 1, rng);
        auto fp = FusionParams<double>::init(c, 4, rng);
        randomize(fp, rng);
        worst[3] = std::max(worst[3], naive::max_err(fuse(x, other, fp), naive::fuse(nx, naive::from(other), fusion_of(fp))));

        auto pp = PcsaParams<double>::init(c, i % 2 == 0 ? 3 : 5, k, k2, 4, rng);
        randomize(pp, rng);
        worst[4] = std::max(worst[4], naive::max_err(pcsa_forward(x, pp), naive_pcsa(nx, pp)));

        PcsamConfig mc;
        mc.channels = c;
        mc.group1 = {k, k2, 3};
        mc.group2 = {k2, k, 5};
        auto mp = PcsamParams<double>::init(mc, rng);
        randomize(mp, rng);
        const std::int64_t half = c / 2;
        naive::Img lo(n, half, h, w), hi(n, half, h, w);
        for (std::int64_t b = 0; b < n; ++b)
            for (std::int64_t ch = 0; ch < half; ++ch)
                for (std::int64_t y = 0; y < h; ++y)
                    for (std::int64_t q = 0; q < w; ++q) {
                        lo(b, ch, y, q) = nx(b, ch, y, q);
                        hi(b, ch, y, q) = nx(b, half + ch, y, q);
                    }
        const auto ra = naive_pcsa(lo, mp.group1), rb = naive_pcsa(hi, mp.group2);
        naive::Img want(n, c, h, w);
        for (std::int64_t b = 0; b < n; ++b)
            for (std::int64_t ch = 0; ch < half; ++ch)
                for (std::int64_t y = 0; y < h; ++y)
                    for (std::int64_t q = 0; q < w; ++q) {
                        want(b, ch, y, q) = ra(b, ch, y, q);
                        want(b, half + ch, y, q) = rb(b, ch, y, q);
                    }
        worst[5] = std::max(worst[5], naive::max_err(pcsam_forward(x, mc, mp), want));
    }
    const double max_err = *std::max_element(worst.begin(), worst.end());
    const double secs = seconds_since(t0);
    report(1, max_err <= kOracleTol && secs < 60.0,
           fmt("%.0f instances per op, max abs err vsa %.2e hsa %.2e strip_weights %.2e", double(kOracleInstances), worst[0],
               worst[1], worst[2]) +
               fmt(" fuse %.2e pcsa %.2e pcsam %.2e (tol 1e-6), %.1f s", worst[3], worst[4], worst[5], secs));
}

// ---------------------------------------------------------------------------
// 2. gradient suite

void criterion_gradients() {
    const auto t0 = Clock::now();
    std::string detail;
    bool pass = true;
    for (auto [scope, name] : {std::pair{GradCheckScope::op, "op"}, std::pair{GradCheckScope::block, "block"},
                               std::pair{GradCheckScope::net, "net"}}) {
        GradCheckOptions o;
        o.scope = scope;
        o.tolerance = kGradTol;
        const auto results = run_gradcheck_suite(o);
        std::size_t ok = 0;
        double worst = 0.0;
        for (const auto& r : results) {
            ok += r.passed && r.rel_error <= kGradTol ? 1 : 0;
            worst = std::max(worst, r.rel_error);
        }
        pass = pass && ok == results.size() && !results.empty();
        detail += std::string(name) + fmt(" %.0f/%.0f (worst %.2e) ", double(ok), double(results.size()), worst);
    }
    const double secs = seconds_since(t0);
    report(2, pass && secs < 300.0, detail + fmt("tol 1e-3, %.1f s", secs));
}

// ---------------------------------------------------------------------------
// 3. identity at init

void criterion_identity() {
    bool pass = true;
    Rng rng(33);
    double min_psnr = kPsnrCap;
    for (auto mixer : {BlockMixer::pcsam, BlockMixer::depthwise}) {
        NetworkConfig cfg;
        cfg.mixer = mixer;
        for (std::uint64_t seed : {0u, 7u}) {
            auto params = init_params<float>(cfg, seed);
            const TensorF x = TensorF::uniform({2, 3, 32, 48}, 0, 1, rng);
            pass = pass && same_values(net_forward(x, params, cfg), x);
            const TensorF img = TensorF::uniform({3, 32, 32}, 0, 1, rng);
            min_psnr = std::min(min_psnr, psnr(dehaze_image(img, params, cfg), img));
        }
    }
    pass = pass && min_psnr == kPsnrCap;
    report(3, pass, fmt("net(I) == I bit-exact for both mixers, eval PSNR %.1f dB (cap %.0f)", min_psnr, kPsnrCap));
}

// ---------------------------------------------------------------------------
// 4. toy experiment

struct ToyResult {
    double hazy = 0, dehazed = 0;
};

ToyResult toy_run(std::uint64_t seed, BlockMixer mixer) {
    DatasetSpec spec;
    spec.seed = seed;
    const auto all = to_image_pairs(generate_dataset(spec));
    const std::vector<ImagePair> train(all.begin(), all.begin() + 80), test(all.begin() + 80, all.end());
    TrainConfig cfg;
    cfg.iterations = kToyIterations;
    cfg.batch = 8;
    cfg.seed = seed;
    NetworkConfig net;
    net.mixer = mixer;
    Trainer tr(cfg, net, train);
    tr.run();
    const auto s = evaluate(test, tr.params(), net);
    return {s.mean_psnr_hazy, s.mean_psnr_dehazed};
}

void criterion_toy() {
    const auto t0 = Clock::now();
    double gain = 0, full = 0, base = 0;
    for (auto seed : kToySeeds) {
        const auto p = toy_run(seed, BlockMixer::pcsam);
        const auto b = toy_run(seed, BlockMixer::depthwise);
        std::printf("  toy seed %lu: hazy %.3f dB, PCSAM %.3f dB, Base %.3f dB\n", static_cast<unsigned long>(seed),
                    p.hazy, p.dehazed, b.dehazed);
        std::fflush(stdout);
        gain += (p.dehazed - p.hazy) / kToySeeds.size();
        full += p.dehazed / kToySeeds.size();
        base += b.dehazed / kToySeeds.size();
    }
    const double secs = seconds_since(t0);
    const bool gain_ok = gain >= kMinGainDb;
    const bool ablation_ok = full - base >= kMinAblationDb;
    report(4, gain_ok && ablation_ok && secs < 600.0,
           fmt("PCSAM mean gain over hazy %.2f dB (need >= 3); PCSAM - Base %+.2f dB over 3 seeds (need >= 0.5); %.0f s",
               gain, full - base, secs));
}

// ---------------------------------------------------------------------------
// 5. complexity

double mean_ns(const std::function<void()>& fn, int reps, int warmup) {
    for (int i = 0; i < warmup; ++i) fn();
    double total = 0;
    for (int i = 0; i < reps; ++i) {
        const auto t0 = Clock::now();
        fn();
        total += std::chrono::duration<double, std::nano>(Clock::now() - t0).count();
    }
    return total / reps;
}

void criterion_complexity() {
    NoGradGuard no_grad;
    Rng rng(5);
    const TensorF x = TensorF::uniform({1, 32, 256, 256}, -1, 1, rng);
    const TensorF a8 = TensorF::uniform({1, 8}, 0, 1, rng), a64 = TensorF::uniform({1, 64}, 0, 1, rng);
    const double t8 = mean_ns([&] { (void)vsa_apply(x, a8); }, 5, 1);
    const double t64 = mean_ns([&] { (void)vsa_apply(x, a64); }, 5, 1);

    NetworkConfig cfg;
    auto params = init_params<float>(cfg, 0);
    const TensorF small = TensorF::uniform({1, 3, 64, 64}, 0, 1, rng);
    const TensorF large = TensorF::uniform({1, 3, 128, 128}, 0, 1, rng);
    const double n64 = mean_ns([&] { (void)net_forward(small, params, cfg); }, 5, 1);
    const double n128 = mean_ns([&] { (void)net_forward(large, params, cfg); }, 5, 1);
    const double rs = t64 / t8, rn = n128 / n64;
    report(5, rs <= kMaxStripRatio && rn <= kMaxNetRatio,
           fmt("vsa 1x32x256x256 K64/K8 = %.2f (<= 10); net_forward 128^2/64^2 = %.2f (<= 6)", rs, rn));
}

// ---------------------------------------------------------------------------
// 6. metric exactness

void criterion_metrics() {
    const TensorD a({3, 32, 32}, 0.3), b({3, 32, 32}, 0.4);
    const double p = psnr(a, b);
    Rng rng(6);
    const TensorD x = TensorD::uniform({3, 32, 32}, 0, 1, rng);
    const double s = ssim(x, x);
    const TensorF j = TensorF::uniform({3, 16, 16}, 0, 1, rng);
    const bool t1 = same_values(synth_haze(j, TensorF({1, 16, 16}, 1.0f), 0.85), j);
    const TensorF at0 = synth_haze(j, TensorF({1, 16, 16}, 0.0f), 0.85);
    bool t0 = true;
    for (float v : at0.data()) t0 = t0 && v == 0.85f;
    report(6, std::abs(p - 20.0) <= kPsnrTol && std::abs(s - 1.0) <= kSsimTol && t1 && t0,
           fmt("PSNR(0.1 offset) = %.6f dB, SSIM(x,x) - 1 = %.1e, ", p, s - 1.0) + "synthesis t=1 -> J " +
               (t1 ? "exact" : "inexact") + ", t=0 -> A " + (t0 ? "exact" : "inexact"));
}

// ---------------------------------------------------------------------------
// 7. determinism and persistence

void criterion_persistence() {
    DatasetSpec spec;
    spec.count = 24;
    const auto data = to_image_pairs(generate_dataset(spec));
    TrainConfig cfg;
    cfg.iterations = 12;
    cfg.seed = 3;
    const NetworkConfig net;
    Trainer a(cfg, net, data), b(cfg, net, data);
    a.run();
    b.run();
    bool curves = a.history().size() == cfg.iterations;
    for (std::size_t i = 0; curves && i < cfg.iterations; ++i) curves = a.history()[i].loss == b.history()[i].loss;

    Trainer first(cfg, net, data);
    for (int i = 0; i < 6; ++i) first.step();
    Checkpoint ck = decode_checkpoint(encode_checkpoint(first.net_config(), first.params(), first.adam()));
    Trainer resumed(cfg, ck.net, data, std::move(ck.params), std::move(ck.adam));
    resumed.run();
    bool resume = resumed.history().size() == 6;
    for (std::size_t i = 0; resume && i < 6; ++i) resume = resumed.history()[i].loss == a.history()[i + 6].loss;
    for (const auto& [name, t] : a.params()) resume = resume && same_values(t, resumed.params().get(name));

    Rng rng(7);
    const TensorF img = TensorF::uniform({3, 17, 23}, 0, 1, rng);
    const TensorF back = decode_ppm(encode_ppm(img));
    double ppm = 0;
    for (std::size_t i = 0; i < img.numel(); ++i) ppm = std::max(ppm, std::abs(double(img.data()[i]) - back.data()[i]));

    report(7, curves && resume && ppm <= kPpmTol,
           std::string("rerun curves ") + (curves ? "bit-identical" : "differ") + ", resume at 6/12 " +
               (resume ? "bit-identical" : "differs") + fmt(", PPM round trip max err %.5f (<= 1/255)", ppm));
}

}  // namespace

int main() {
    criterion_oracles();
    criterion_gradients();
    criterion_identity();
    criterion_toy();
    criterion_complexity();
    criterion_metrics();
    criterion_persistence();
    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
