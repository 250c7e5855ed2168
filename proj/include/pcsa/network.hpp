#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "pcsa/attention.hpp"
#include "pcsa/params.hpp"
#include "pcsa/tensor.hpp"

namespace pcsa {

/// Three-scale encoder-decoder: one attention block per encoder and decoder
/// scale (six total), stride-2 downsampling, nearest+conv upsampling,
/// additive feature skips and a global image-level residual.
struct NetworkConfig {
    std::int64_t base_channels = 16;
    std::int64_t io_channels = 3;
    BlockMixer mixer = BlockMixer::pcsam;
    /// Strip lengths at full resolution; each coarser scale halves them and
    /// rounds to odd.
    PcsaGroupConfig group1{7, 7, 3};
    PcsaGroupConfig group2{11, 11, 5};
    int fusion_reduction = 4;
    int ffn_expansion = 2;

    static constexpr int kScales = 3;

    std::int64_t channels_at(int scale) const { return base_channels << scale; }
    PcsabConfig block_config(int scale) const;
    void validate() const;

    /// Stable textual form, one key=value per line.
    std::string canonical() const;
    /// FNV-1a 64 of canonical().
    std::uint64_t digest() const;
};

template <typename T>
using NetworkParams = ParamStore<T>;

template <typename T>
struct ConvParams {
    Tensor<T> weight;
    Tensor<T> bias;

    void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
        fn(prefix + ".weight", weight);
        fn(prefix + ".bias", bias);
    }
};

/// Kaiming-uniform conv weights, zero biases, unit residual scales, and a
/// zero output conv so the fresh network is the identity map.
template <typename T>
NetworkParams<T> init_params(const NetworkConfig& cfg, std::uint64_t seed);

/// Input [N, io_channels, H, W] with H, W divisible by 4.
template <typename T>
Tensor<T> net_forward(const Tensor<T>& x, NetworkParams<T>& params, const NetworkConfig& cfg);

/// Stride-2 3x3 conv: [N,C,H,W] -> [N,2C,H/2,W/2]. H and W must be even.
template <typename T>
Tensor<T> downsample(const Tensor<T>& x, const ConvParams<T>& p);

/// Nearest x2 then 3x3 conv: [N,C,H,W] -> [N,C/2,2H,2W]. C must be even.
template <typename T>
Tensor<T> upsample(const Tensor<T>& x, const ConvParams<T>& p);

}  // namespace pcsa
