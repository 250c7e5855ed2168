#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>

#include "pcsa/params.hpp"
#include "pcsa/random.hpp"
#include "pcsa/tensor.hpp"

// Parallel cross strip attention.
//
// A strip branch pools the feature map to a channel descriptor, projects it
// to K tap weights through a sigmoid, and aggregates each pixel with its K
// neighbors along one axis (vertical or horizontal). The two branches are
// fused per channel by a softmax over the branch axis. The multi-scale
// module runs two such units on the two channel halves with different strip
// lengths and depthwise kernels.

namespace pcsa {

enum class StripDirection { vertical, horizontal };

template <typename T>
using ParamVisitor = std::function<void(const std::string&, Tensor<T>&)>;

template <typename T>
struct StripWeightParams {
    Tensor<T> proj_weight;  // [K, C]
    Tensor<T> proj_bias;    // [K]
    StripDirection direction = StripDirection::vertical;

    std::int64_t strip_length() const { return proj_weight.dim(0); }
    std::int64_t channels() const { return proj_weight.dim(1); }

    static StripWeightParams init(std::int64_t channels, std::int64_t strip_length, StripDirection dir, Rng& rng);
    void visit(const std::string& prefix, const ParamVisitor<T>& fn);
};

template <typename T>
struct FusionParams {
    Tensor<T> reduce_weight;  // [hidden, C, 1, 1]
    Tensor<T> reduce_bias;    // [hidden]
    Tensor<T> expand_weight;  // [2C, hidden, 1, 1]
    Tensor<T> expand_bias;    // [2C]

    /// Hidden width is max(C / reduction, 4).
    static std::int64_t hidden_width(std::int64_t channels, int reduction);
    static FusionParams init(std::int64_t channels, int reduction, Rng& rng);
    void visit(const std::string& prefix, const ParamVisitor<T>& fn);
};

template <typename T>
struct PcsaParams {
    Tensor<T> dw_weight;  // [C, 1, k, k]
    Tensor<T> dw_bias;    // [C]
    StripWeightParams<T> vsa;
    StripWeightParams<T> hsa;
    FusionParams<T> fusion;

    static PcsaParams init(std::int64_t channels, int dw_kernel, int k1, int k2, int reduction, Rng& rng);
    void visit(const std::string& prefix, const ParamVisitor<T>& fn);
};

struct PcsaGroupConfig {
    int k1 = 7;  // vertical strip length
    int k2 = 7;  // horizontal strip length
    int dw_kernel = 3;
};

struct PcsamConfig {
    std::int64_t channels = 16;
    PcsaGroupConfig group1{7, 7, 3};
    PcsaGroupConfig group2{11, 11, 5};
    int fusion_reduction = 4;

    /// Throws std::invalid_argument on odd channels, even or nonpositive
    /// strip lengths or kernels.
    void validate() const;
};

template <typename T>
struct PcsamParams {
    PcsaParams<T> group1;
    PcsaParams<T> group2;

    static PcsamParams init(const PcsamConfig& cfg, Rng& rng);
    void visit(const std::string& prefix, const ParamVisitor<T>& fn);
};

/// Token mixer inside the residual block. `depthwise` is the attention-free
/// baseline: a plain depthwise 3x3 convolution.
enum class BlockMixer { pcsam, depthwise };

struct PcsabConfig {
    PcsamConfig pcsam;
    BlockMixer mixer = BlockMixer::pcsam;
    int ffn_expansion = 2;
};

template <typename T>
struct PcsabParams {
    Tensor<T> norm1_weight, norm1_bias;  // [C]
    PcsamParams<T> pcsam;                // mixer == pcsam
    Tensor<T> base_dw_weight, base_dw_bias;  // mixer == depthwise
    Tensor<T> alpha1;                    // [1, C, 1, 1]
    Tensor<T> norm2_weight, norm2_bias;  // [C]
    Tensor<T> ffn_expand_weight, ffn_expand_bias;
    Tensor<T> ffn_reduce_weight, ffn_reduce_bias;
    Tensor<T> alpha2;                    // [1, C, 1, 1]
    BlockMixer mixer = BlockMixer::pcsam;

    static PcsabParams init(const PcsabConfig& cfg, Rng& rng);
    void visit(const std::string& prefix, const ParamVisitor<T>& fn);
};

/// Registers every tensor of params under prefix (aliasing, not copying).
template <typename T, typename P>
void register_params(ParamStore<T>& store, const std::string& prefix, P& params) {
    params.visit(prefix, [&](const std::string& name, Tensor<T>& t) { store.add(name, t); });
}

/// Points every tensor of params at the store entry of the same name.
template <typename T, typename P>
void bind_params(ParamStore<T>& store, const std::string& prefix, P& params) {
    params.visit(prefix, [&](const std::string& name, Tensor<T>& t) { t = store.get(name); });
}

/// Kaiming-uniform draw with bound sqrt(6 / fan_in).
template <typename T>
Tensor<T> kaiming_uniform(Shape shape, std::int64_t fan_in, Rng& rng);

// ---------------------------------------------------------------------------
// Operations

/// sigmoid(proj_weight . GAP(x) + proj_bias) per batch item -> [N, K].
template <typename T>
Tensor<T> strip_weights(const Tensor<T>& x, const StripWeightParams<T>& p);

/// out[n,c,h,w] = sum_k a[n,k] * x[n,c,h - K/2 + k, w], zero outside the image.
template <typename T>
Tensor<T> vsa_apply(const Tensor<T>& x, const Tensor<T>& a);

/// out[n,c,h,w] = sum_k a[n,k] * x[n,c,h,w - K/2 + k], zero outside the image.
template <typename T>
Tensor<T> hsa_apply(const Tensor<T>& x, const Tensor<T>& a);

/// Branch weights (wv, wh), each [N, C, 1, 1], from the softmax over the
/// branch axis of expand(relu(reduce(GAP(v + h)))).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> fusion_weights(const Tensor<T>& v, const Tensor<T>& h, const FusionParams<T>& p);

/// wv * v + wh * h with per-channel weights from fusion_weights().
template <typename T>
Tensor<T> fuse(const Tensor<T>& v, const Tensor<T>& h, const FusionParams<T>& p);

enum class BranchExecution { sequential, parallel };

/// Depthwise conv, then vertical and horizontal strip branches, then fusion.
/// Parallel execution only applies when nothing is being recorded; it is
/// bit-identical to sequential execution.
template <typename T>
Tensor<T> pcsa_forward(const Tensor<T>& x, const PcsaParams<T>& p,
                       BranchExecution exec = BranchExecution::sequential);

/// Channel halves go through group1 (dw 3x3) and group2 (dw 5x5) and are
/// concatenated back.
template <typename T>
Tensor<T> pcsam_forward(const Tensor<T>& x, const PcsamConfig& cfg, const PcsamParams<T>& params);

/// u = x + alpha1 * mixer(norm(x)); out = u + alpha2 * ffn(norm(u)).
template <typename T>
Tensor<T> pcsab_forward(const Tensor<T>& x, const PcsabConfig& cfg, const PcsabParams<T>& params);

/// Largest strip length that can still reach inside an axis of `extent`.
std::int64_t effective_strip_length(std::int64_t strip_length, std::int64_t extent);

/// Nearest odd integer to `value` (ties never occur for halves of odd
/// lengths), at least 1.
int round_to_odd(double value);

}  // namespace pcsa
