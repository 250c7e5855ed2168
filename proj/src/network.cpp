#include "pcsa/network.hpp"

#include <sstream>
#include <stdexcept>

#include "pcsa/ops.hpp"

namespace pcsa {

PcsabConfig NetworkConfig::block_config(int scale) const {
    PcsabConfig b;
    b.mixer = mixer;
    b.ffn_expansion = ffn_expansion;
    b.pcsam.channels = channels_at(scale);
    b.pcsam.fusion_reduction = fusion_reduction;
    const double div = static_cast<double>(1 << scale);
    auto scaled = [&](const PcsaGroupConfig& g) {
        PcsaGroupConfig s = g;
        if (scale > 0) {
            s.k1 = round_to_odd(g.k1 / div);
            s.k2 = round_to_odd(g.k2 / div);
        }
        return s;
    };
    b.pcsam.group1 = scaled(group1);
    b.pcsam.group2 = scaled(group2);
    return b;
}

void NetworkConfig::validate() const {
    if (base_channels < 2 || base_channels % 2 != 0) {
        throw std::invalid_argument("base_channels must be even and >= 2, got " + std::to_string(base_channels));
    }
    if (io_channels < 1) throw std::invalid_argument("io_channels must be positive");
    if (ffn_expansion < 1) throw std::invalid_argument("ffn_expansion must be positive");
    for (int s = 0; s < kScales; ++s) block_config(s).pcsam.validate();
}

std::string NetworkConfig::canonical() const {
    std::ostringstream os;
    os << "base_channels=" << base_channels << '\n'
       << "io_channels=" << io_channels << '\n'
       << "mixer=" << (mixer == BlockMixer::pcsam ? "pcsam" : "depthwise") << '\n'
       << "group1=" << group1.k1 << ',' << group1.k2 << ',' << group1.dw_kernel << '\n'
       << "group2=" << group2.k1 << ',' << group2.k2 << ',' << group2.dw_kernel << '\n'
       << "fusion_reduction=" << fusion_reduction << '\n'
       << "ffn_expansion=" << ffn_expansion << '\n';
    return os.str();
}

std::uint64_t NetworkConfig::digest() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : canonical()) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

template <typename T>
ConvParams<T> make_conv(std::int64_t cout, std::int64_t cin, int k, Rng& rng) {
    return {kaiming_uniform<T>({cout, cin, k, k}, cin * k * k, rng), Tensor<T>::zeros({cout})};
}

std::string enc_name(int s) { return "enc." + std::to_string(s) + ".pcsab"; }
std::string dec_name(int s) { return "dec." + std::to_string(s) + ".pcsab"; }
std::string down_name(int s) { return "down." + std::to_string(s); }
std::string up_name(int s) { return "up." + std::to_string(s); }

template <typename T>
ConvParams<T> bind_conv(NetworkParams<T>& store, const std::string& prefix) {
    ConvParams<T> c;
    bind_params(store, prefix, c);
    return c;
}

template <typename T>
PcsabParams<T> bind_block(NetworkParams<T>& store, const std::string& prefix, BlockMixer mixer) {
    PcsabParams<T> p;
    p.mixer = mixer;
    bind_params(store, prefix, p);
    return p;
}

}  // namespace

template <typename T>
NetworkParams<T> init_params(const NetworkConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    NetworkParams<T> store;
    const std::int64_t c0 = cfg.base_channels;

    auto in_conv = make_conv<T>(c0, cfg.io_channels, 3, rng);
    register_params(store, "in_conv", in_conv);
    for (int s = 0; s < NetworkConfig::kScales; ++s) {
        auto block = PcsabParams<T>::init(cfg.block_config(s), rng);
        register_params(store, enc_name(s), block);
        if (s + 1 < NetworkConfig::kScales) {
            auto down = make_conv<T>(cfg.channels_at(s + 1), cfg.channels_at(s), 3, rng);
            register_params(store, down_name(s), down);
        }
    }
    for (int s = NetworkConfig::kScales - 1; s >= 0; --s) {
        if (s + 1 < NetworkConfig::kScales) {
            auto up = make_conv<T>(cfg.channels_at(s), cfg.channels_at(s + 1), 3, rng);
            register_params(store, up_name(s), up);
        }
        auto block = PcsabParams<T>::init(cfg.block_config(s), rng);
        register_params(store, dec_name(s), block);
    }
    ConvParams<T> out_conv{Tensor<T>::zeros({cfg.io_channels, c0, 3, 3}), Tensor<T>::zeros({cfg.io_channels})};
    register_params(store, "out_conv", out_conv);
    return store;
}

template <typename T>
Tensor<T> downsample(const Tensor<T>& x, const ConvParams<T>& p) {
    if (x.rank() != 4) throw ShapeError("downsample: input must be rank 4, got " + shape_str(x.shape()));
    if (x.dim(2) % 2 != 0) throw ShapeError("downsample: H (axis 2) must be even, got " + std::to_string(x.dim(2)));
    if (x.dim(3) % 2 != 0) throw ShapeError("downsample: W (axis 3) must be even, got " + std::to_string(x.dim(3)));
    return conv2d(x, p.weight, p.bias, 2, 1);
}

template <typename T>
Tensor<T> upsample(const Tensor<T>& x, const ConvParams<T>& p) {
    if (x.rank() != 4) throw ShapeError("upsample: input must be rank 4, got " + shape_str(x.shape()));
    if (x.dim(1) % 2 != 0) throw ShapeError("upsample: C (axis 1) must be even, got " + std::to_string(x.dim(1)));
    if (p.weight.dim(0) * 2 != x.dim(1)) {
        throw ShapeError("upsample: conv must halve channels " + std::to_string(x.dim(1)) + " -> " +
                         std::to_string(x.dim(1) / 2) + ", weight is " + shape_str(p.weight.shape()));
    }
    return conv2d(upsample_nearest2x(x), p.weight, p.bias, 1, 1);
}

template <typename T>
Tensor<T> net_forward(const Tensor<T>& x, NetworkParams<T>& params, const NetworkConfig& cfg) {
    if (x.rank() != 4 || x.dim(1) != cfg.io_channels) {
        throw ShapeError("net_forward: input must be [N," + std::to_string(cfg.io_channels) + ",H,W], got " +
                         shape_str(x.shape()));
    }
    if (x.dim(2) % 4 != 0 || x.dim(3) % 4 != 0) {
        throw ShapeError("net_forward: H and W must be divisible by 4, got " + std::to_string(x.dim(2)) + "x" +
                         std::to_string(x.dim(3)) + "; pad the image to a multiple of 4");
    }
    constexpr int S = NetworkConfig::kScales;
    std::array<Tensor<T>, S> skips;

    const auto in_conv = bind_conv(params, "in_conv");
    Tensor<T> h = conv2d(x, in_conv.weight, in_conv.bias, 1, 1);
    for (int s = 0; s < S; ++s) {
        const auto bcfg = cfg.block_config(s);
        h = pcsab_forward(h, bcfg, bind_block(params, enc_name(s), cfg.mixer));
        skips[s] = h;
        if (s + 1 < S) h = downsample(h, bind_conv(params, down_name(s)));
    }
    for (int s = S - 1; s >= 0; --s) {
        if (s + 1 < S) h = add(upsample(h, bind_conv(params, up_name(s))), skips[s]);
        h = pcsab_forward(h, cfg.block_config(s), bind_block(params, dec_name(s), cfg.mixer));
    }
    const auto out_conv = bind_conv(params, "out_conv");
    return add(conv2d(h, out_conv.weight, out_conv.bias, 1, 1), x);
}

#define PCSA_INSTANTIATE_NETWORK(T)                                                                      \
    template NetworkParams<T> init_params<T>(const NetworkConfig&, std::uint64_t);                       \
    template Tensor<T> net_forward(const Tensor<T>&, NetworkParams<T>&, const NetworkConfig&);           \
    template Tensor<T> downsample(const Tensor<T>&, const ConvParams<T>&);                               \
    template Tensor<T> upsample(const Tensor<T>&, const ConvParams<T>&);

PCSA_INSTANTIATE_NETWORK(float)
PCSA_INSTANTIATE_NETWORK(double)

#undef PCSA_INSTANTIATE_NETWORK

}  // namespace pcsa
