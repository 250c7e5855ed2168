#include "pcsa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace pcsa {

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("psnr: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    double acc = 0.0;
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
        acc += d * d;
    }
    const double mse = acc / static_cast<double>(x.size());
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

namespace {

std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(static_cast<std::size_t>(size));
    const int r = size / 2;
    double total = 0.0;
    for (int i = 0; i < size; ++i) {
        const double d = i - r;
        w[i] = std::exp(-(d * d) / (2.0 * sigma * sigma));
        total += w[i];
    }
    for (auto& v : w) v /= total;
    return w;
}

// Separable valid-mode filtering of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& src, std::int64_t h, std::int64_t w,
                                 const std::vector<double>& win) {
    const auto k = static_cast<std::int64_t>(win.size());
    const std::int64_t wo = w - k + 1;
    const std::int64_t ho = h - k + 1;
    std::vector<double> tmp(static_cast<std::size_t>(h * wo));
    for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < wo; ++j) {
            double acc = 0.0;
            for (std::int64_t t = 0; t < k; ++t) acc += win[t] * src[i * w + j + t];
            tmp[i * wo + j] = acc;
        }
    std::vector<double> out(static_cast<std::size_t>(ho * wo));
    for (std::int64_t i = 0; i < ho; ++i)
        for (std::int64_t j = 0; j < wo; ++j) {
            double acc = 0.0;
            for (std::int64_t t = 0; t < k; ++t) acc += win[t] * tmp[(i + t) * wo + j];
            out[i * wo + j] = acc;
        }
    return out;
}

}  // namespace

template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("ssim: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    if (a.rank() != 3 && a.rank() != 4) {
        throw ShapeError("ssim: expected [C,H,W] or [N,C,H,W], got " + shape_str(a.shape()));
    }
    const std::int64_t h = a.dim(-2);
    const std::int64_t w = a.dim(-1);
    const std::int64_t planes = static_cast<std::int64_t>(a.numel()) / (h * w);
    int size = static_cast<int>(std::min<std::int64_t>(11, std::min(h, w)));
    if (size % 2 == 0) --size;
    const auto win = gaussian_window(size, 1.5);
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;

    double total = 0.0;
    std::size_t count = 0;
    const std::size_t plane_size = static_cast<std::size_t>(h * w);
    std::vector<double> pa(plane_size), pb(plane_size), paa(plane_size), pbb(plane_size), pab(plane_size);
    for (std::int64_t p = 0; p < planes; ++p) {
        for (std::size_t i = 0; i < plane_size; ++i) {
            const double x = static_cast<double>(a.ptr()[p * h * w + i]);
            const double y = static_cast<double>(b.ptr()[p * h * w + i]);
            pa[i] = x;
            pb[i] = y;
            paa[i] = x * x;
            pbb[i] = y * y;
            pab[i] = x * y;
        }
        const auto mu_a = filter_valid(pa, h, w, win);
        const auto mu_b = filter_valid(pb, h, w, win);
        const auto e_aa = filter_valid(paa, h, w, win);
        const auto e_bb = filter_valid(pbb, h, w, win);
        const auto e_ab = filter_valid(pab, h, w, win);
        for (std::size_t i = 0; i < mu_a.size(); ++i) {
            const double ma = mu_a[i];
            const double mb = mu_b[i];
            const double va = e_aa[i] - ma * ma;
            const double vb = e_bb[i] - mb * mb;
            const double cov = e_ab[i] - ma * mb;
            const double num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
            const double den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            total += num / den;
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

template double psnr(const Tensor<float>&, const Tensor<float>&);
template double psnr(const Tensor<double>&, const Tensor<double>&);
template double ssim(const Tensor<float>&, const Tensor<float>&);
template double ssim(const Tensor<double>&, const Tensor<double>&);

}  // namespace pcsa
