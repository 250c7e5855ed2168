#pragma once

#include "pcsa/tensor.hpp"

namespace pcsa {

/// PSNR value reported for identical images.
inline constexpr double kPsnrCap = 100.0;

/// 10*log10(1/MSE) for images in [0,1], capped at kPsnrCap.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b);

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1, averaged over valid window positions and
/// all channel planes. Accepts [C,H,W] or [N,C,H,W]. Planes smaller than 11
/// use the largest odd window that fits.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace pcsa
