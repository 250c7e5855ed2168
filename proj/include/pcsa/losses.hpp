#pragma once

#include <array>
#include <cstdint>

#include "pcsa/tensor.hpp"

namespace pcsa {

/// Frozen random feature pyramid for contrastive regularization: three
/// 3x3 stride-2 conv + ReLU stages (3 -> 8 -> 16 -> 32 channels). Weights
/// never require grad, but gradients flow through them to the input.
template <typename T>
struct CrExtractor {
    static constexpr int kStages = 3;
    static constexpr std::uint64_t kDefaultSeed = 0xC0FFEE;
    static constexpr std::array<double, kStages> kStageWeights{0.25, 0.5, 1.0};

    std::array<Tensor<T>, kStages> weights;
    std::array<Tensor<T>, kStages> biases;

    static CrExtractor make(std::uint64_t seed = kDefaultSeed);
    std::array<Tensor<T>, kStages> features(const Tensor<T>& x) const;
};

struct LossConfig {
    double lambda_cr = 0.2;
    double epsilon = 1e-7;
};

/// Mean absolute difference.
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target);

/// sum_i w_i * |phi_i(anchor) - phi_i(positive)|_1 / (|phi_i(anchor) - phi_i(negative)|_1 + eps)
/// where |.|_1 is the mean absolute difference over the stage's feature map.
template <typename T>
Tensor<T> cr_loss(const Tensor<T>& anchor, const Tensor<T>& positive, const Tensor<T>& negative,
                  const CrExtractor<T>& ext, const LossConfig& cfg);

/// l1_loss(pred, gt) + lambda_cr * cr_loss(pred, gt, hazy).
template <typename T>
Tensor<T> total_loss(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& hazy, const CrExtractor<T>& ext,
                     const LossConfig& cfg);

}  // namespace pcsa
