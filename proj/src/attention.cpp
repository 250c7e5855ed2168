#include "pcsa/attention.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <stdexcept>

#include "pcsa/log.hpp"
#include "pcsa/ops.hpp"
#include "pcsa/tape.hpp"

namespace pcsa {

using detail::check_finite;
using detail::grad_buffer;
using detail::recording_tape;

std::int64_t effective_strip_length(std::int64_t strip_length, std::int64_t extent) {
    return std::min(strip_length, 2 * extent - 1);
}

int round_to_odd(double value) {
    const int r = 2 * static_cast<int>(std::floor(value / 2.0)) + 1;
    return std::max(r, 1);
}

template <typename T>
Tensor<T> kaiming_uniform(Shape shape, std::int64_t fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    return Tensor<T>::uniform(std::move(shape), -bound, bound, rng);
}

// ---------------------------------------------------------------------------
// Parameter structs

template <typename T>
StripWeightParams<T> StripWeightParams<T>::init(std::int64_t channels, std::int64_t strip_length,
                                                StripDirection dir, Rng& rng) {
    if (strip_length < 1 || strip_length % 2 == 0) {
        throw std::invalid_argument("strip length must be odd and >= 1, got " + std::to_string(strip_length));
    }
    StripWeightParams p;
    p.proj_weight = kaiming_uniform<T>({strip_length, channels}, channels, rng);
    p.proj_bias = Tensor<T>::zeros({strip_length});
    p.direction = dir;
    return p;
}

template <typename T>
void StripWeightParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".proj_weight", proj_weight);
    fn(prefix + ".proj_bias", proj_bias);
}

template <typename T>
std::int64_t FusionParams<T>::hidden_width(std::int64_t channels, int reduction) {
    return std::max<std::int64_t>(channels / reduction, 4);
}

template <typename T>
FusionParams<T> FusionParams<T>::init(std::int64_t channels, int reduction, Rng& rng) {
    const std::int64_t hidden = hidden_width(channels, reduction);
    FusionParams p;
    p.reduce_weight = kaiming_uniform<T>({hidden, channels, 1, 1}, channels, rng);
    p.reduce_bias = Tensor<T>::zeros({hidden});
    // Zero so both branches start at weight 1/2; a random expand conv on the
    // pooled features saturates the softmax in deep blocks and stalls it.
    p.expand_weight = Tensor<T>::zeros({2 * channels, hidden, 1, 1});
    p.expand_bias = Tensor<T>::zeros({2 * channels});
    return p;
}

template <typename T>
void FusionParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".reduce_weight", reduce_weight);
    fn(prefix + ".reduce_bias", reduce_bias);
    fn(prefix + ".expand_weight", expand_weight);
    fn(prefix + ".expand_bias", expand_bias);
}

template <typename T>
PcsaParams<T> PcsaParams<T>::init(std::int64_t channels, int dw_kernel, int k1, int k2, int reduction, Rng& rng) {
    if (dw_kernel < 1 || dw_kernel % 2 == 0) {
        throw std::invalid_argument("depthwise kernel must be odd, got " + std::to_string(dw_kernel));
    }
    PcsaParams p;
    p.dw_weight = kaiming_uniform<T>({channels, 1, dw_kernel, dw_kernel}, dw_kernel * dw_kernel, rng);
    p.dw_bias = Tensor<T>::zeros({channels});
    p.vsa = StripWeightParams<T>::init(channels, k1, StripDirection::vertical, rng);
    p.hsa = StripWeightParams<T>::init(channels, k2, StripDirection::horizontal, rng);
    p.fusion = FusionParams<T>::init(channels, reduction, rng);
    return p;
}

template <typename T>
void PcsaParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".dw_weight", dw_weight);
    fn(prefix + ".dw_bias", dw_bias);
    vsa.visit(prefix + ".vsa", fn);
    hsa.visit(prefix + ".hsa", fn);
    fusion.visit(prefix + ".fusion", fn);
}

void PcsamConfig::validate() const {
    if (channels < 2 || channels % 2 != 0) {
        throw std::invalid_argument("PCSAM channels must be even, got " + std::to_string(channels));
    }
    for (const auto* g : {&group1, &group2}) {
        for (int v : {g->k1, g->k2, g->dw_kernel}) {
            if (v < 1 || v % 2 == 0) {
                throw std::invalid_argument("strip lengths and kernels must be odd and >= 1, got " +
                                            std::to_string(v));
            }
        }
    }
    if (fusion_reduction < 1) throw std::invalid_argument("fusion reduction must be >= 1");
}

template <typename T>
PcsamParams<T> PcsamParams<T>::init(const PcsamConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::int64_t half = cfg.channels / 2;
    PcsamParams p;
    p.group1 = PcsaParams<T>::init(half, cfg.group1.dw_kernel, cfg.group1.k1, cfg.group1.k2, cfg.fusion_reduction, rng);
    p.group2 = PcsaParams<T>::init(half, cfg.group2.dw_kernel, cfg.group2.k1, cfg.group2.k2, cfg.fusion_reduction, rng);
    return p;
}

template <typename T>
void PcsamParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    group1.visit(prefix + ".g1", fn);
    group2.visit(prefix + ".g2", fn);
}

template <typename T>
PcsabParams<T> PcsabParams<T>::init(const PcsabConfig& cfg, Rng& rng) {
    const std::int64_t c = cfg.pcsam.channels;
    const std::int64_t hidden = c * cfg.ffn_expansion;
    PcsabParams p;
    p.mixer = cfg.mixer;
    p.norm1_weight = Tensor<T>::ones({c});
    p.norm1_bias = Tensor<T>::zeros({c});
    if (cfg.mixer == BlockMixer::pcsam) {
        p.pcsam = PcsamParams<T>::init(cfg.pcsam, rng);
    } else {
        p.base_dw_weight = kaiming_uniform<T>({c, 1, 3, 3}, 9, rng);
        p.base_dw_bias = Tensor<T>::zeros({c});
    }
    p.alpha1 = Tensor<T>::ones({1, c, 1, 1});
    p.norm2_weight = Tensor<T>::ones({c});
    p.norm2_bias = Tensor<T>::zeros({c});
    p.ffn_expand_weight = kaiming_uniform<T>({hidden, c, 1, 1}, c, rng);
    p.ffn_expand_bias = Tensor<T>::zeros({hidden});
    p.ffn_reduce_weight = kaiming_uniform<T>({c, hidden, 1, 1}, hidden, rng);
    p.ffn_reduce_bias = Tensor<T>::zeros({c});
    p.alpha2 = Tensor<T>::ones({1, c, 1, 1});
    return p;
}

template <typename T>
void PcsabParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".norm1.weight", norm1_weight);
    fn(prefix + ".norm1.bias", norm1_bias);
    if (mixer == BlockMixer::pcsam) {
        pcsam.visit(prefix + ".pcsam", fn);
    } else {
        fn(prefix + ".base_dw.weight", base_dw_weight);
        fn(prefix + ".base_dw.bias", base_dw_bias);
    }
    fn(prefix + ".alpha1", alpha1);
    fn(prefix + ".norm2.weight", norm2_weight);
    fn(prefix + ".norm2.bias", norm2_bias);
    fn(prefix + ".ffn.expand_weight", ffn_expand_weight);
    fn(prefix + ".ffn.expand_bias", ffn_expand_bias);
    fn(prefix + ".ffn.reduce_weight", ffn_reduce_weight);
    fn(prefix + ".ffn.reduce_bias", ffn_reduce_bias);
    fn(prefix + ".alpha2", alpha2);
}

// ---------------------------------------------------------------------------
// Strip weights and aggregation

template <typename T>
Tensor<T> strip_weights(const Tensor<T>& x, const StripWeightParams<T>& p) {
    if (x.rank() != 4) throw ShapeError("strip_weights: input must be rank 4, got " + shape_str(x.shape()));
    const std::int64_t k = p.strip_length();
    if (p.proj_weight.rank() != 2 || p.channels() != x.dim(1)) {
        throw ShapeError("strip_weights: proj_weight " + shape_str(p.proj_weight.shape()) +
                         " does not match input C (axis 1) " + std::to_string(x.dim(1)));
    }
    const Tensor<T> pooled = global_avg_pool(x);
    const Tensor<T> w = reshape(p.proj_weight, {k, p.channels(), 1, 1});
    const Tensor<T> logits = conv2d(pooled, w, p.proj_bias, 1, 0);
    return reshape(sigmoid(logits), {x.dim(0), k});
}

namespace {

enum class StripAxis { rows, cols };

template <typename T>
void check_strip_inputs(const Tensor<T>& x, const Tensor<T>& a, StripAxis axis, const char* op) {
    if (x.rank() != 4) throw ShapeError(std::string(op) + ": input must be rank 4, got " + shape_str(x.shape()));
    if (a.rank() != 2 || a.dim(0) != x.dim(0)) {
        throw ShapeError(std::string(op) + ": tap weights must be [N, K] with N = " + std::to_string(x.dim(0)) +
                         ", got " + shape_str(a.shape()));
    }
    const std::int64_t k = a.dim(1);
    const std::int64_t extent = axis == StripAxis::rows ? x.dim(2) : x.dim(3);
    if (k > 2 * extent - 1) {
        warn(std::string(op) + ": strip length " + std::to_string(k) + " exceeds 2*" +
             (axis == StripAxis::rows ? "H" : "W") + "-1 = " + std::to_string(2 * extent - 1) +
             "; clamped to " + std::to_string(effective_strip_length(k, extent)));
    }
}

// Forward kernel. Taps run in increasing k for every output element in both
// directions, so the two directions are transposes of each other bit for bit.
template <typename T>
void strip_forward(const T* x, const T* a, T* out, std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w,
                   std::int64_t k, StripAxis axis) {
    const std::int64_t r = k / 2;
    for (std::int64_t b = 0; b < n; ++b) {
        const T* taps = a + b * k;
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const T* src = x + (b * c + ch) * h * w;
            T* dst = out + (b * c + ch) * h * w;
            std::fill_n(dst, h * w, T(0));
            if (axis == StripAxis::rows) {
                for (std::int64_t row = 0; row < h; ++row) {
                    T* orow = dst + row * w;
                    for (std::int64_t t = 0; t < k; ++t) {
                        const std::int64_t in_row = row - r + t;
                        if (in_row < 0 || in_row >= h) continue;
                        const T at = taps[t];
                        const T* irow = src + in_row * w;
                        for (std::int64_t col = 0; col < w; ++col) orow[col] += at * irow[col];
                    }
                }
            } else {
                for (std::int64_t row = 0; row < h; ++row) {
                    T* orow = dst + row * w;
                    const T* irow = src + row * w;
                    for (std::int64_t t = 0; t < k; ++t) {
                        const std::int64_t d = t - r;
                        if (d >= w || -d >= w) continue;
                        const std::int64_t lo = std::max<std::int64_t>(0, -d);
                        const std::int64_t hi = std::min<std::int64_t>(w, w - d);
                        const T at = taps[t];
                        for (std::int64_t col = lo; col < hi; ++col) orow[col] += at * irow[col + d];
                    }
                }
            }
        }
    }
}

template <typename T>
void strip_backward(const T* x, const T* a, const T* g, T* gx, T* ga, std::int64_t n, std::int64_t c,
                    std::int64_t h, std::int64_t w, std::int64_t k, StripAxis axis) {
    const std::int64_t r = k / 2;
    std::vector<double> acc(static_cast<std::size_t>(k));
    for (std::int64_t b = 0; b < n; ++b) {
        const T* taps = a + b * k;
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const T* src = x + (b * c + ch) * h * w;
            const T* gp = g + (b * c + ch) * h * w;
            T* gsrc = gx != nullptr ? gx + (b * c + ch) * h * w : nullptr;
            for (std::int64_t t = 0; t < k; ++t) {
                const std::int64_t d = t - r;
                const T at = taps[t];
                T dot = T(0);
                if (axis == StripAxis::rows) {
                    if (d >= h || -d >= h) continue;
                    const std::int64_t lo = std::max<std::int64_t>(0, -d);
                    const std::int64_t hi = std::min<std::int64_t>(h, h - d);
                    for (std::int64_t row = lo; row < hi; ++row) {
                        const T* grow = gp + row * w;
                        const std::int64_t in_off = (row + d) * w;
                        if (gsrc != nullptr) {
                            for (std::int64_t col = 0; col < w; ++col) gsrc[in_off + col] += at * grow[col];
                        }
                        for (std::int64_t col = 0; col < w; ++col) dot += grow[col] * src[in_off + col];
                    }
                } else {
                    if (d >= w || -d >= w) continue;
                    const std::int64_t lo = std::max<std::int64_t>(0, -d);
                    const std::int64_t hi = std::min<std::int64_t>(w, w - d);
                    for (std::int64_t row = 0; row < h; ++row) {
                        const T* grow = gp + row * w;
                        const std::int64_t in_off = row * w + d;
                        if (gsrc != nullptr) {
                            for (std::int64_t col = lo; col < hi; ++col) gsrc[in_off + col] += at * grow[col];
                        }
                        for (std::int64_t col = lo; col < hi; ++col) dot += grow[col] * src[in_off + col];
                    }
                }
                acc[static_cast<std::size_t>(t)] += static_cast<double>(dot);
            }
        }
        if (ga != nullptr) {
            for (std::int64_t t = 0; t < k; ++t) ga[b * k + t] += static_cast<T>(acc[static_cast<std::size_t>(t)]);
        }
    }
}

template <typename T>
Tensor<T> strip_apply(const Tensor<T>& x, const Tensor<T>& a, StripAxis axis, const char* name) {
    check_strip_inputs(x, a, axis, name);
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), k = a.dim(1);
    Tensor<T> out(x.shape());
    strip_forward(x.ptr(), a.ptr(), out.ptr(), n, c, h, w, k, axis);
    check_finite(name, out);
    if (Tape* tape = recording_tape<T>({&x, &a})) {
        tape->push<T>(name, out.impl(), [xi = x.impl(), ai = a.impl(), n, c, h, w, k, axis](const std::vector<T>& g) {
            T* gx = xi->requires_grad ? grad_buffer(*xi).data() : nullptr;
            T* ga = ai->requires_grad ? grad_buffer(*ai).data() : nullptr;
            strip_backward(xi->data.data(), ai->data.data(), g.data(), gx, ga, n, c, h, w, k, axis);
        });
    }
    return out;
}

}  // namespace

template <typename T>
Tensor<T> vsa_apply(const Tensor<T>& x, const Tensor<T>& a) {
    return strip_apply(x, a, StripAxis::rows, "vsa_apply");
}

template <typename T>
Tensor<T> hsa_apply(const Tensor<T>& x, const Tensor<T>& a) {
    return strip_apply(x, a, StripAxis::cols, "hsa_apply");
}

// ---------------------------------------------------------------------------
// Fusion and composites

template <typename T>
std::pair<Tensor<T>, Tensor<T>> fusion_weights(const Tensor<T>& v, const Tensor<T>& h, const FusionParams<T>& p) {
    if (v.shape() != h.shape()) {
        throw ShapeError("fuse: branch shapes differ " + shape_str(v.shape()) + " vs " + shape_str(h.shape()));
    }
    const std::int64_t n = v.dim(0), c = v.dim(1);
    if (p.expand_weight.dim(0) != 2 * c) {
        throw ShapeError("fuse: expand conv must output 2C = " + std::to_string(2 * c) + " channels, got " +
                         std::to_string(p.expand_weight.dim(0)));
    }
    const Tensor<T> s = add(v, h);
    const Tensor<T> z = relu(conv2d(global_avg_pool(s), p.reduce_weight, p.reduce_bias, 1, 0));
    const Tensor<T> logits = reshape(conv2d(z, p.expand_weight, p.expand_bias, 1, 0), {n, 2, c, 1});
    auto parts = split(softmax(logits, 1), {1, 1}, 1);
    return {reshape(parts[0], {n, c, 1, 1}), reshape(parts[1], {n, c, 1, 1})};
}

template <typename T>
Tensor<T> fuse(const Tensor<T>& v, const Tensor<T>& h, const FusionParams<T>& p) {
    auto [wv, wh] = fusion_weights(v, h, p);
    return add(mul(v, wv), mul(h, wh));
}

template <typename T>
Tensor<T> pcsa_forward(const Tensor<T>& x, const PcsaParams<T>& p, BranchExecution exec) {
    const std::int64_t k = p.dw_weight.dim(2);
    const Tensor<T> y = depthwise_conv2d(x, p.dw_weight, p.dw_bias, static_cast<int>(k / 2));
    auto vertical = [&] { return vsa_apply(y, strip_weights(y, p.vsa)); };
    auto horizontal = [&] { return hsa_apply(y, strip_weights(y, p.hsa)); };
    if (exec == BranchExecution::parallel && Tape::active() == nullptr) {
        auto hfut = std::async(std::launch::async, horizontal);
        Tensor<T> v = vertical();
        Tensor<T> h = hfut.get();
        return fuse(v, h, p.fusion);
    }
    Tensor<T> v = vertical();
    Tensor<T> h = horizontal();
    return fuse(v, h, p.fusion);
}

template <typename T>
Tensor<T> pcsam_forward(const Tensor<T>& x, const PcsamConfig& cfg, const PcsamParams<T>& params) {
    if (x.rank() != 4) throw ShapeError("pcsam_forward: input must be rank 4, got " + shape_str(x.shape()));
    if (x.dim(1) % 2 != 0) {
        throw ShapeError("pcsam_forward: C (axis 1) must be even, got " + std::to_string(x.dim(1)));
    }
    if (x.dim(1) != cfg.channels) {
        throw ShapeError("pcsam_forward: input C (axis 1) " + std::to_string(x.dim(1)) + " does not match config " +
                         std::to_string(cfg.channels));
    }
    auto halves = split_channels(x);
    Tensor<T> a = pcsa_forward(halves[0], params.group1);
    Tensor<T> b = pcsa_forward(halves[1], params.group2);
    return concat<T>({a, b}, 1);
}

template <typename T>
Tensor<T> pcsab_forward(const Tensor<T>& x, const PcsabConfig& cfg, const PcsabParams<T>& params) {
    const Tensor<T> n1 = channel_norm(x, params.norm1_weight, params.norm1_bias);
    Tensor<T> mixed;
    if (params.mixer == BlockMixer::pcsam) {
        mixed = pcsam_forward(n1, cfg.pcsam, params.pcsam);
    } else {
        mixed = depthwise_conv2d(n1, params.base_dw_weight, params.base_dw_bias, 1);
    }
    const Tensor<T> u = add(x, mul(mixed, params.alpha1));
    const Tensor<T> n2 = channel_norm(u, params.norm2_weight, params.norm2_bias);
    const Tensor<T> hidden = relu(conv2d(n2, params.ffn_expand_weight, params.ffn_expand_bias, 1, 0));
    const Tensor<T> ffn = conv2d(hidden, params.ffn_reduce_weight, params.ffn_reduce_bias, 1, 0);
    return add(u, mul(ffn, params.alpha2));
}

#define PCSA_INSTANTIATE_ATTENTION(T)                                                                          \
    template struct StripWeightParams<T>;                                                                      \
    template struct FusionParams<T>;                                                                           \
    template struct PcsaParams<T>;                                                                             \
    template struct PcsamParams<T>;                                                                            \
    template struct PcsabParams<T>;                                                                            \
    template Tensor<T> kaiming_uniform<T>(Shape, std::int64_t, Rng&);                                          \
    template Tensor<T> strip_weights(const Tensor<T>&, const StripWeightParams<T>&);                           \
    template Tensor<T> vsa_apply(const Tensor<T>&, const Tensor<T>&);                                          \
    template Tensor<T> hsa_apply(const Tensor<T>&, const Tensor<T>&);                                          \
    template std::pair<Tensor<T>, Tensor<T>> fusion_weights(const Tensor<T>&, const Tensor<T>&,                \
                                                            const FusionParams<T>&);                           \
    template Tensor<T> fuse(const Tensor<T>&, const Tensor<T>&, const FusionParams<T>&);                       \
    template Tensor<T> pcsa_forward(const Tensor<T>&, const PcsaParams<T>&, BranchExecution);                  \
    template Tensor<T> pcsam_forward(const Tensor<T>&, const PcsamConfig&, const PcsamParams<T>&);             \
    template Tensor<T> pcsab_forward(const Tensor<T>&, const PcsabConfig&, const PcsabParams<T>&);

PCSA_INSTANTIATE_ATTENTION(float)
PCSA_INSTANTIATE_ATTENTION(double)

#undef PCSA_INSTANTIATE_ATTENTION

}  // namespace pcsa
