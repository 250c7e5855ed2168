#include "pcsa/losses.hpp"

#include <stdexcept>

#include "pcsa/attention.hpp"
#include "pcsa/ops.hpp"

namespace pcsa {

template <typename T>
CrExtractor<T> CrExtractor<T>::make(std::uint64_t seed) {
    Rng rng(seed);
    CrExtractor ext;
    const std::array<std::int64_t, kStages + 1> widths{3, 8, 16, 32};
    for (int i = 0; i < kStages; ++i) {
        ext.weights[i] = kaiming_uniform<T>({widths[i + 1], widths[i], 3, 3}, widths[i] * 9, rng);
        ext.biases[i] = Tensor<T>::zeros({widths[i + 1]});
    }
    return ext;
}

template <typename T>
std::array<Tensor<T>, CrExtractor<T>::kStages> CrExtractor<T>::features(const Tensor<T>& x) const {
    std::array<Tensor<T>, kStages> out;
    Tensor<T> h = x;
    for (int i = 0; i < kStages; ++i) {
        h = relu(conv2d(h, weights[i], biases[i], 2, 1));
        out[i] = h;
    }
    return out;
}

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.shape() != target.shape()) {
        throw ShapeError("l1_loss: shape mismatch " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
    }
    return mean(abs(sub(pred, target)));
}

template <typename T>
Tensor<T> cr_loss(const Tensor<T>& anchor, const Tensor<T>& positive, const Tensor<T>& negative,
                  const CrExtractor<T>& ext, const LossConfig& cfg) {
    if (anchor.shape() != positive.shape() || anchor.shape() != negative.shape()) {
        throw ShapeError("cr_loss: anchor " + shape_str(anchor.shape()) + ", positive " +
                         shape_str(positive.shape()) + " and negative " + shape_str(negative.shape()) +
                         " must share a shape");
    }
    const auto fa = ext.features(anchor);
    const auto fp = ext.features(positive);
    const auto fn = ext.features(negative);
    Tensor<T> total;
    for (int i = 0; i < CrExtractor<T>::kStages; ++i) {
        const Tensor<T> pull = mean(abs(sub(fa[i], fp[i])));
        const Tensor<T> push = add_scalar(mean(abs(sub(fa[i], fn[i]))), static_cast<T>(cfg.epsilon));
        const Tensor<T> term = scale(div(pull, push), static_cast<T>(CrExtractor<T>::kStageWeights[i]));
        total = total.defined() ? add(total, term) : term;
    }
    return total;
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& hazy, const CrExtractor<T>& ext,
                     const LossConfig& cfg) {
    if (cfg.lambda_cr < 0.0) throw std::invalid_argument("lambda_cr must be nonnegative");
    Tensor<T> l1 = l1_loss(pred, gt);
    if (cfg.lambda_cr == 0.0) return l1;
    return add(l1, scale(cr_loss(pred, gt, hazy, ext, cfg), static_cast<T>(cfg.lambda_cr)));
}

template struct CrExtractor<float>;
template struct CrExtractor<double>;

#define PCSA_INSTANTIATE_LOSSES(T)                                                                             \
    template Tensor<T> l1_loss(const Tensor<T>&, const Tensor<T>&);                                            \
    template Tensor<T> cr_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const CrExtractor<T>&,    \
                               const LossConfig&);                                                             \
    template Tensor<T> total_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const CrExtractor<T>&, \
                                  const LossConfig&);

PCSA_INSTANTIATE_LOSSES(float)
PCSA_INSTANTIATE_LOSSES(double)

#undef PCSA_INSTANTIATE_LOSSES

}  // namespace pcsa
