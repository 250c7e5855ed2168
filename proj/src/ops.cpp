#include "pcsa/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace pcsa {

namespace {

using detail::check_finite;
using detail::grad_buffer;
using detail::recording_tape;

template <typename T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

std::string axis_name(int axis) {
    switch (axis) {
        case 0: return "N (axis 0)";
        case 1: return "C (axis 1)";
        case 2: return "H (axis 2)";
        case 3: return "W (axis 3)";
        default: return "axis " + std::to_string(axis);
    }
}

int normalize_axis(int axis, int rank, const char* op) {
    const int a = axis < 0 ? axis + rank : axis;
    if (a < 0 || a >= rank) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
    }
    return a;
}

template <typename T>
void require_rank4(const Tensor<T>& x, const char* op, const char* what) {
    if (x.rank() != 4) {
        throw ShapeError(std::string(op) + ": " + what + " must be rank 4 (N,C,H,W), got " + shape_str(x.shape()));
    }
}

// ---------------------------------------------------------------------------
// Broadcasting over singleton axes

struct BroadcastPlan {
    Shape out;
    std::vector<std::int64_t> a_strides;
    std::vector<std::int64_t> b_strides;
    bool same = false;
};

std::vector<std::int64_t> contiguous_strides(const Shape& s) {
    std::vector<std::int64_t> st(s.size());
    std::int64_t acc = 1;
    for (std::size_t i = s.size(); i-- > 0;) {
        st[i] = acc;
        acc *= s[i];
    }
    return st;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
    BroadcastPlan p;
    if (a.size() != b.size()) {
        throw ShapeError(std::string(op) + ": rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
    if (a == b) {
        p.out = a;
        p.same = true;
        return p;
    }
    p.out.resize(a.size());
    p.a_strides = contiguous_strides(a);
    p.b_strides = contiguous_strides(b);
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i]) {
            p.out[i] = a[i];
        } else if (a[i] == 1) {
            p.out[i] = b[i];
            p.a_strides[i] = 0;
        } else if (b[i] == 1) {
            p.out[i] = a[i];
            p.b_strides[i] = 0;
        } else {
            throw ShapeError(std::string(op) + ": cannot broadcast " + axis_name(static_cast<int>(i)) + " (" +
                             std::to_string(a[i]) + " vs " + std::to_string(b[i]) + ") in " + shape_str(a) +
                             " and " + shape_str(b));
        }
    }
    return p;
}

// Calls fn(out_index, a_offset, b_offset) for every output element in
// row-major order.
template <typename Fn>
void broadcast_loop(const BroadcastPlan& p, Fn&& fn) {
    const std::size_t total = shape_numel(p.out);
    if (p.same) {
        for (std::size_t i = 0; i < total; ++i) fn(i, i, i);
        return;
    }
    const int r = static_cast<int>(p.out.size());
    const std::int64_t inner = p.out[r - 1];
    const std::int64_t sa = p.a_strides[r - 1];
    const std::int64_t sb = p.b_strides[r - 1];
    std::vector<std::int64_t> idx(r, 0);
    std::int64_t aoff = 0;
    std::int64_t boff = 0;
    for (std::size_t o = 0; o < total; o += static_cast<std::size_t>(inner)) {
        for (std::int64_t j = 0; j < inner; ++j) {
            fn(o + static_cast<std::size_t>(j), static_cast<std::size_t>(aoff + j * sa),
               static_cast<std::size_t>(boff + j * sb));
        }
        for (int d = r - 2; d >= 0; --d) {
            ++idx[d];
            aoff += p.a_strides[d];
            boff += p.b_strides[d];
            if (idx[d] < p.out[d]) break;
            aoff -= p.a_strides[d] * p.out[d];
            boff -= p.b_strides[d] * p.out[d];
            idx[d] = 0;
        }
    }
}

enum class BinaryKind { add, sub, mul, div };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind, const char* name) {
    auto plan = plan_broadcast(a.shape(), b.shape(), name);
    Tensor<T> out(plan.out);
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    T* po = out.ptr();
    switch (kind) {
        case BinaryKind::add: broadcast_loop(plan, [&](std::size_t o, std::size_t i, std::size_t j) { po[o] = pa[i] + pb[j]; }); break;
        case BinaryKind::sub: broadcast_loop(plan, [&](std::size_t o, std::size_t i, std::size_t j) { po[o] = pa[i] - pb[j]; }); break;
        case BinaryKind::mul: broadcast_loop(plan, [&](std::size_t o, std::size_t i, std::size_t j) { po[o] = pa[i] * pb[j]; }); break;
        case BinaryKind::div: broadcast_loop(plan, [&](std::size_t o, std::size_t i, std::size_t j) { po[o] = pa[i] / pb[j]; }); break;
    }
    check_finite(name, out);

    if (Tape* tape = recording_tape<T>({&a, &b})) {
        tape->push<T>(name, out.impl(), [ai = a.impl(), bi = b.impl(), plan, kind](const std::vector<T>& g) {
            const bool ga_on = ai->requires_grad;
            const bool gb_on = bi->requires_grad;
            T* ga = ga_on ? grad_buffer(*ai).data() : nullptr;
            T* gb = gb_on ? grad_buffer(*bi).data() : nullptr;
            const T* va = ai->data.data();
            const T* vb = bi->data.data();
            broadcast_loop(plan, [&](std::size_t o, std::size_t i, std::size_t j) {
                const T go = g[o];
                switch (kind) {
                    case BinaryKind::add:
                        if (ga) ga[i] += go;
                        if (gb) gb[j] += go;
                        break;
                    case BinaryKind::sub:
                        if (ga) ga[i] += go;
                        if (gb) gb[j] -= go;
                        break;
                    case BinaryKind::mul:
                        if (ga) ga[i] += go * vb[j];
                        if (gb) gb[j] += go * va[i];
                        break;
                    case BinaryKind::div:
                        if (ga) ga[i] += go / vb[j];
                        if (gb) gb[j] -= go * va[i] / (vb[j] * vb[j]);
                        break;
                }
            });
        });
    }
    return out;
}

// Unary elementwise op with a derivative expressed in terms of input x and
// output y.
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& x, const char* name, Fwd fwd, Deriv deriv) {
    Tensor<T> out(x.shape());
    const T* px = x.ptr();
    T* po = out.ptr();
    const std::size_t n = x.numel();
    for (std::size_t i = 0; i < n; ++i) po[i] = fwd(px[i]);
    check_finite(name, out);
    if (Tape* tape = recording_tape<T>({&x})) {
        std::weak_ptr<TensorImpl<T>> wout = out.impl();
        tape->push<T>(name, out.impl(), [xi = x.impl(), wout, deriv](const std::vector<T>& g) {
            auto oi = wout.lock();
            auto& gx = grad_buffer(*xi);
            const T* vx = xi->data.data();
            const T* vy = oi->data.data();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(vx[i], vy[i]);
        });
    }
    return out;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary(a, b, BinaryKind::add, "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary(a, b, BinaryKind::sub, "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary(a, b, BinaryKind::mul, "mul");
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return binary(a, b, BinaryKind::div, "div");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
    return unary(
        x, "scale", [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value) {
    return unary(
        x, "add_scalar", [value](T v) { return v + value; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return unary(
        x, "sigmoid",
        [](T v) {
            // Split on sign so exp never overflows.
            if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
            const T e = std::exp(v);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    return unary(
        x, "relu", [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
    return unary(
        x, "abs", [](T v) { return std::abs(v); },
        [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    double acc = 0.0;
    for (T v : x.data()) acc += static_cast<double>(v);
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
    check_finite("sum", out);
    if (Tape* tape = recording_tape<T>({&x})) {
        tape->push<T>("sum", out.impl(), [xi = x.impl()](const std::vector<T>& g) {
            auto& gx = grad_buffer(*xi);
            for (auto& v : gx) v += g[0];
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    double acc = 0.0;
    for (T v : x.data()) acc += static_cast<double>(v);
    const double n = static_cast<double>(x.numel());
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / n));
    check_finite("mean", out);
    if (Tape* tape = recording_tape<T>({&x})) {
        tape->push<T>("mean", out.impl(), [xi = x.impl(), n](const std::vector<T>& g) {
            auto& gx = grad_buffer(*xi);
            const T s = static_cast<T>(static_cast<double>(g[0]) / n);
            for (auto& v : gx) v += s;
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Shape ops

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    Tensor<T> out = x.reshaped_copy(std::move(shape));
    if (Tape* tape = recording_tape<T>({&x})) {
        tape->push<T>("reshape", out.impl(), [xi = x.impl()](const std::vector<T>& g) {
            auto& gx = grad_buffer(*xi);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& ref = parts.front().shape();
    const int ax = normalize_axis(axis, static_cast<int>(ref.size()), "concat");
    Shape out_shape = ref;
    out_shape[ax] = 0;
    for (const auto& p : parts) {
        if (p.rank() != static_cast<int>(ref.size())) {
            throw ShapeError("concat: rank mismatch " + shape_str(p.shape()) + " vs " + shape_str(ref));
        }
        for (int d = 0; d < p.rank(); ++d) {
            if (d != ax && p.shape()[d] != ref[d]) {
                throw ShapeError("concat: " + axis_name(d) + " mismatch " + shape_str(p.shape()) + " vs " +
                                 shape_str(ref));
            }
        }
        out_shape[ax] += p.shape()[ax];
    }
    std::int64_t outer = 1;
    for (int d = 0; d < ax; ++d) outer *= ref[d];
    std::int64_t inner = 1;
    for (std::size_t d = ax + 1; d < ref.size(); ++d) inner *= ref[d];
    const std::int64_t out_block = out_shape[ax] * inner;

    Tensor<T> out(out_shape);
    std::int64_t offset = 0;
    for (const auto& p : parts) {
        const std::int64_t block = p.shape()[ax] * inner;
        for (std::int64_t o = 0; o < outer; ++o) {
            std::copy_n(p.ptr() + o * block, block, out.ptr() + o * out_block + offset);
        }
        offset += block;
    }

    Tape* tape = nullptr;
    for (const auto& p : parts) {
        if (Tape* t = recording_tape<T>({&p})) tape = t;
    }
    if (tape != nullptr) {
        std::vector<ImplPtr<T>> impls;
        for (const auto& p : parts) impls.push_back(p.impl());
        tape->push<T>("concat", out.impl(), [impls, outer, inner, out_block, ax](const std::vector<T>& g) {
            std::int64_t off = 0;
            for (const auto& pi : impls) {
                const std::int64_t block = pi->shape[ax] * inner;
                if (pi->requires_grad) {
                    auto& gp = grad_buffer(*pi);
                    for (std::int64_t o = 0; o < outer; ++o) {
                        const T* src = g.data() + o * out_block + off;
                        T* dst = gp.data() + o * block;
                        for (std::int64_t i = 0; i < block; ++i) dst[i] += src[i];
                    }
                }
                off += block;
            }
        });
    }
    return out;
}

template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& x, const std::vector<std::int64_t>& sizes, int axis) {
    const int ax = normalize_axis(axis, x.rank(), "split");
    const std::int64_t total = std::accumulate(sizes.begin(), sizes.end(), std::int64_t{0});
    if (total != x.shape()[ax]) {
        throw ShapeError("split: sizes sum to " + std::to_string(total) + " but " + axis_name(ax) + " has extent " +
                         std::to_string(x.shape()[ax]));
    }
    std::int64_t outer = 1;
    for (int d = 0; d < ax; ++d) outer *= x.shape()[d];
    std::int64_t inner = 1;
    for (int d = ax + 1; d < x.rank(); ++d) inner *= x.shape()[d];
    const std::int64_t in_block = x.shape()[ax] * inner;

    std::vector<Tensor<T>> parts;
    Tape* tape = recording_tape<T>({&x});
    std::int64_t offset = 0;
    for (std::int64_t size : sizes) {
        if (size <= 0) throw ShapeError("split: part sizes must be positive");
        Shape s = x.shape();
        s[ax] = size;
        Tensor<T> part(s);
        const std::int64_t block = size * inner;
        for (std::int64_t o = 0; o < outer; ++o) {
            std::copy_n(x.ptr() + o * in_block + offset, block, part.ptr() + o * block);
        }
        if (tape != nullptr) {
            tape->push<T>("split", part.impl(), [xi = x.impl(), outer, block, in_block, offset](const std::vector<T>& g) {
                auto& gx = grad_buffer(*xi);
                for (std::int64_t o = 0; o < outer; ++o) {
                    T* dst = gx.data() + o * in_block + offset;
                    const T* src = g.data() + o * block;
                    for (std::int64_t i = 0; i < block; ++i) dst[i] += src[i];
                }
            });
        }
        parts.push_back(std::move(part));
        offset += block;
    }
    return parts;
}

template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& x) {
    if (x.rank() < 2) throw ShapeError("split_channels: rank must be at least 2, got " + shape_str(x.shape()));
    const std::int64_t c = x.shape()[1];
    if (c % 2 != 0) {
        throw ShapeError("split_channels: C (axis 1) must be even, got " + std::to_string(c));
    }
    return split(x, {c / 2, c / 2}, 1);
}

template <typename T>
Tensor<T> transpose_hw(const Tensor<T>& x) {
    require_rank4(x, "transpose_hw", "input");
    const auto n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    Tensor<T> out({n, c, w, h});
    for (std::int64_t p = 0; p < n * c; ++p) {
        const T* src = x.ptr() + p * h * w;
        T* dst = out.ptr() + p * h * w;
        for (std::int64_t i = 0; i < h; ++i)
            for (std::int64_t j = 0; j < w; ++j) dst[j * h + i] = src[i * w + j];
    }
    if (Tape* tape = recording_tape<T>({&x})) {
        tape->push<T>("transpose_hw", out.impl(), [xi = x.impl(), n, c, h, w](const std::vector<T>& g) {
            auto& gx = grad_buffer(*xi);
            for (std::int64_t p = 0; p < n * c; ++p) {
                const T* src = g.data() + p * h * w;
                T* dst = gx.data() + p * h * w;
                for (std::int64_t i = 0; i < h; ++i)
                    for (std::int64_t j = 0; j < w; ++j) dst[i * w + j] += src[j * h + i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> pad2d(const Tensor<T>& x, std::int64_t pad_h, std::int64_t pad_w) {
    require_rank4(x, "pad2d", "input");
    if (pad_h < 0 || pad_w < 0) throw ShapeError("pad2d: padding must be nonnegative");
    const auto n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    const auto ho = h + 2 * pad_h, wo = w + 2 * pad_w;
    Tensor<T> out({n, c, ho, wo});
    for (std::int64_t p = 0; p < n * c; ++p) {
        for (std::int64_t i = 0; i < h; ++i) {
            std::copy_n(x.ptr() + (p * h + i) * w, w, out.ptr() + (p * ho + i + pad_h) * wo + pad_w);
        }
    }
    if (Tape* tape = recording_tape<T>({&x})) {
        tape->push<T>("pad2d", out.impl(), [xi = x.impl(), n, c, h, w, ho, wo, pad_h, pad_w](const std::vector<T>& g) {
            auto& gx = grad_buffer(*xi);
            for (std::int64_t p = 0; p < n * c; ++p)
                for (std::int64_t i = 0; i < h; ++i)
                    for (std::int64_t j = 0; j < w; ++j)
                        gx[(p * h + i) * w + j] += g[(p * ho + i + pad_h) * wo + j + pad_w];
        });
    }
    return out;
}

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
    require_rank4(x, "upsample_nearest2x", "input");
    const auto n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    Tensor<T> out({n, c, 2 * h, 2 * w});
    for (std::int64_t p = 0; p < n * c; ++p) {
        const T* src = x.ptr() + p * h * w;
        T* dst = out.ptr() + p * 4 * h * w;
        for (std::int64_t i = 0; i < 2 * h; ++i)
            for (std::int64_t j = 0; j < 2 * w; ++j) dst[i * 2 * w + j] = src[(i / 2) * w + j / 2];
    }
    if (Tape* tape = recording_tape<T>({&x})) {
        tape->push<T>("upsample_nearest2x", out.impl(), [xi = x.impl(), n, c, h, w](const std::vector<T>& g) {
            auto& gx = grad_buffer(*xi);
            for (std::int64_t p = 0; p < n * c; ++p) {
                const T* src = g.data() + p * 4 * h * w;
                T* dst = gx.data() + p * h * w;
                for (std::int64_t i = 0; i < 2 * h; ++i)
                    for (std::int64_t j = 0; j < 2 * w; ++j) dst[(i / 2) * w + j / 2] += src[i * 2 * w + j];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

struct ConvGeom {
    std::int64_t n, cin, h, w, cout, kh, kw, ho, wo;
    int stride, pad;
    bool depthwise;
};

// Range of output columns whose input column ow*stride - pad + kx is in [0, w).
inline void column_range(const ConvGeom& g, std::int64_t kx, std::int64_t& lo, std::int64_t& hi) {
    const std::int64_t s = g.stride;
    const std::int64_t first = g.pad - kx;  // need ow*s >= first
    lo = first <= 0 ? 0 : (first + s - 1) / s;
    const std::int64_t last = g.w - 1 + g.pad - kx;  // need ow*s <= last
    hi = last < 0 ? -1 : std::min<std::int64_t>(g.wo - 1, last / s);
}

template <typename T>
ConvGeom conv_geometry(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride, int pad,
                       bool depthwise, const char* op) {
    require_rank4(x, op, "input");
    require_rank4(weight, op, "weight");
    ConvGeom g{};
    g.n = x.shape()[0];
    g.cin = x.shape()[1];
    g.h = x.shape()[2];
    g.w = x.shape()[3];
    g.cout = weight.shape()[0];
    g.kh = weight.shape()[2];
    g.kw = weight.shape()[3];
    g.stride = stride;
    g.pad = pad;
    g.depthwise = depthwise;
    const std::string name(op);
    if (depthwise) {
        if (weight.shape()[1] != 1) {
            throw ShapeError(name + ": depthwise weight axis 1 must be 1, got " + shape_str(weight.shape()));
        }
        if (g.cout != g.cin) {
            throw ShapeError(name + ": weight output channels " + std::to_string(g.cout) +
                             " must equal input C (axis 1) " + std::to_string(g.cin));
        }
    } else if (weight.shape()[1] != g.cin) {
        throw ShapeError(name + ": weight input channels " + std::to_string(weight.shape()[1]) +
                         " do not match input C (axis 1) " + std::to_string(g.cin));
    }
    if (g.kh % 2 == 0 || g.kw % 2 == 0) {
        throw ShapeError(name + ": kernel extents must be odd, got " + shape_str(weight.shape()));
    }
    if (bias.rank() != 1 || bias.shape()[0] != g.cout) {
        throw ShapeError(name + ": bias must be [" + std::to_string(g.cout) + "], got " + shape_str(bias.shape()));
    }
    if (stride < 1) throw ShapeError(name + ": stride must be positive");
    if (pad < 0) throw ShapeError(name + ": pad must be nonnegative");
    const std::int64_t hspan = g.h + 2 * pad - g.kh;
    const std::int64_t wspan = g.w + 2 * pad - g.kw;
    if (hspan < 0) throw ShapeError(name + ": kernel height " + std::to_string(g.kh) + " exceeds padded H (axis 2)");
    if (wspan < 0) throw ShapeError(name + ": kernel width " + std::to_string(g.kw) + " exceeds padded W (axis 3)");
    g.ho = hspan / stride + 1;
    g.wo = wspan / stride + 1;
    return g;
}

// Dot product with eight interleaved partial sums combined in a fixed order,
// so it vectorizes without reassociation and stays deterministic.
template <typename T>
T lane_dot(const T* a, const T* b, std::int64_t n, std::int64_t stride_b) {
    T acc[8] = {};
    std::int64_t i = 0;
    if (stride_b == 1) {
        for (; i + 8 <= n; i += 8)
            for (int j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
    }
    for (; i < n; ++i) acc[i & 7] += a[i] * b[i * stride_b];
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

// Unfolds one image into rows (ci, ky, kx) x output pixels; zero where
// the tap falls in the padding.
template <typename T>
void im2col(const ConvGeom& g, const T* img, T* col) {
    const std::int64_t s = g.stride;
    const std::int64_t p = g.ho * g.wo;
    for (std::int64_t ci = 0; ci < g.cin; ++ci) {
        const T* src = img + ci * g.h * g.w;
        for (std::int64_t ky = 0; ky < g.kh; ++ky) {
            for (std::int64_t kx = 0; kx < g.kw; ++kx) {
                T* row = col + ((ci * g.kh + ky) * g.kw + kx) * p;
                std::int64_t lo, hi;
                column_range(g, kx, lo, hi);
                for (std::int64_t oy = 0; oy < g.ho; ++oy) {
                    T* dst = row + oy * g.wo;
                    const std::int64_t iy = oy * s - g.pad + ky;
                    if (iy < 0 || iy >= g.h || hi < lo) {
                        std::fill_n(dst, g.wo, T(0));
                        continue;
                    }
                    const std::int64_t base = iy * g.w - g.pad + kx;
                    for (std::int64_t ox = 0; ox < lo; ++ox) dst[ox] = T(0);
                    for (std::int64_t ox = lo; ox <= hi; ++ox) dst[ox] = src[base + ox * s];
                    for (std::int64_t ox = hi + 1; ox < g.wo; ++ox) dst[ox] = T(0);
                }
            }
        }
    }
}

// Adjoint of im2col: accumulates column gradients back into the image.
template <typename T>
void col2im_add(const ConvGeom& g, const T* col, T* img) {
    const std::int64_t s = g.stride;
    const std::int64_t p = g.ho * g.wo;
    for (std::int64_t ci = 0; ci < g.cin; ++ci) {
        T* dst = img + ci * g.h * g.w;
        for (std::int64_t ky = 0; ky < g.kh; ++ky) {
            for (std::int64_t kx = 0; kx < g.kw; ++kx) {
                const T* row = col + ((ci * g.kh + ky) * g.kw + kx) * p;
                std::int64_t lo, hi;
                column_range(g, kx, lo, hi);
                if (hi < lo) continue;
                for (std::int64_t oy = 0; oy < g.ho; ++oy) {
                    const std::int64_t iy = oy * s - g.pad + ky;
                    if (iy < 0 || iy >= g.h) continue;
                    const std::int64_t base = iy * g.w - g.pad + kx;
                    const T* src = row + oy * g.wo;
                    for (std::int64_t ox = lo; ox <= hi; ++ox) dst[base + ox * s] += src[ox];
                }
            }
        }
    }
}

template <typename T>
void dense_conv_forward(const ConvGeom& g, const T* x, const T* wt, const T* b, T* out) {
    const std::int64_t p = g.ho * g.wo;
    const std::int64_t rows = g.cin * g.kh * g.kw;
    std::vector<T> col(static_cast<std::size_t>(rows * p));
    for (std::int64_t n = 0; n < g.n; ++n) {
        im2col(g, x + n * g.cin * g.h * g.w, col.data());
        for (std::int64_t co = 0; co < g.cout; ++co) {
            T* plane = out + (n * g.cout + co) * p;
            std::fill_n(plane, p, b[co]);
            const T* wrow = wt + co * rows;
            for (std::int64_t r = 0; r < rows; ++r) {
                const T wv = wrow[r];
                const T* c = col.data() + r * p;
                for (std::int64_t i = 0; i < p; ++i) plane[i] += wv * c[i];
            }
        }
    }
}

template <typename T>
void dense_conv_backward(const ConvGeom& g, const T* x, const T* wt, const T* gout, T* gx, T* gw) {
    const std::int64_t p = g.ho * g.wo;
    const std::int64_t rows = g.cin * g.kh * g.kw;
    std::vector<T> col(static_cast<std::size_t>(rows * p));
    std::vector<T> gcol(gx != nullptr ? static_cast<std::size_t>(rows * p) : 0);
    for (std::int64_t n = 0; n < g.n; ++n) {
        const T* gimg = gout + n * g.cout * p;
        if (gw != nullptr) {
            im2col(g, x + n * g.cin * g.h * g.w, col.data());
            for (std::int64_t co = 0; co < g.cout; ++co) {
                const T* gplane = gimg + co * p;
                T* gwrow = gw + co * rows;
                for (std::int64_t r = 0; r < rows; ++r) gwrow[r] += lane_dot(gplane, col.data() + r * p, p, 1);
            }
        }
        if (gx != nullptr) {
            std::fill(gcol.begin(), gcol.end(), T(0));
            for (std::int64_t co = 0; co < g.cout; ++co) {
                const T* gplane = gimg + co * p;
                const T* wrow = wt + co * rows;
                for (std::int64_t r = 0; r < rows; ++r) {
                    const T wv = wrow[r];
                    T* c = gcol.data() + r * p;
                    for (std::int64_t i = 0; i < p; ++i) c[i] += wv * gplane[i];
                }
            }
            col2im_add(g, gcol.data(), gx + n * g.cin * g.h * g.w);
        }
    }
}

template <typename T>
void conv_forward(const ConvGeom& g, const T* x, const T* wt, const T* b, T* out) {
    const std::int64_t s = g.stride;
    const std::int64_t ksz = g.kh * g.kw;
    const bool pointwise = ksz == 1 && s == 1 && g.pad == 0;
    if (!g.depthwise && !pointwise) {
        dense_conv_forward(g, x, wt, b, out);
        return;
    }
    for (std::int64_t n = 0; n < g.n; ++n) {
        for (std::int64_t co = 0; co < g.cout; ++co) {
            T* plane = out + (n * g.cout + co) * g.ho * g.wo;
            std::fill_n(plane, g.ho * g.wo, b[co]);
            const std::int64_t ci_begin = g.depthwise ? co : 0;
            const std::int64_t ci_end = g.depthwise ? co + 1 : g.cin;
            for (std::int64_t ci = ci_begin; ci < ci_end; ++ci) {
                const T* src = x + (n * g.cin + ci) * g.h * g.w;
                const T* kern = wt + (g.depthwise ? co : co * g.cin + ci) * ksz;
                if (pointwise) {
                    const T wv = kern[0];
                    for (std::int64_t i = 0; i < g.h * g.w; ++i) plane[i] += wv * src[i];
                    continue;
                }
                for (std::int64_t ky = 0; ky < g.kh; ++ky) {
                    for (std::int64_t kx = 0; kx < g.kw; ++kx) {
                        const T wv = kern[ky * g.kw + kx];
                        std::int64_t lo, hi;
                        column_range(g, kx, lo, hi);
                        if (hi < lo) continue;
                        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
                            const std::int64_t iy = oy * s - g.pad + ky;
                            if (iy < 0 || iy >= g.h) continue;
                            const std::int64_t base = iy * g.w - g.pad + kx;
                            T* out_row = plane + oy * g.wo;
                            if (s == 1) {
                                for (std::int64_t ox = lo; ox <= hi; ++ox) out_row[ox] += wv * src[base + ox];
                            } else {
                                for (std::int64_t ox = lo; ox <= hi; ++ox) out_row[ox] += wv * src[base + ox * s];
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv_backward(const ConvGeom& g, const T* x, const T* wt, const T* gout, T* gx, T* gw, T* gb) {
    const std::int64_t s = g.stride;
    const std::int64_t ksz = g.kh * g.kw;
    const bool pointwise = ksz == 1 && s == 1 && g.pad == 0;
    const std::int64_t plane_size = g.ho * g.wo;
    const bool dense = !g.depthwise && !pointwise;
    if (dense) dense_conv_backward(g, x, wt, gout, gx, gw);
    for (std::int64_t n = 0; n < g.n; ++n) {
        for (std::int64_t co = 0; co < g.cout; ++co) {
            const T* gplane = gout + (n * g.cout + co) * g.ho * g.wo;
            if (gb != nullptr) {
                T acc[8] = {};
                for (std::int64_t i = 0; i < plane_size; ++i) acc[i & 7] += gplane[i];
                gb[co] += ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
            }
            if (dense) continue;
            const std::int64_t ci_begin = g.depthwise ? co : 0;
            const std::int64_t ci_end = g.depthwise ? co + 1 : g.cin;
            for (std::int64_t ci = ci_begin; ci < ci_end; ++ci) {
                const T* src = x + (n * g.cin + ci) * g.h * g.w;
                T* gsrc = gx != nullptr ? gx + (n * g.cin + ci) * g.h * g.w : nullptr;
                const std::int64_t widx = (g.depthwise ? co : co * g.cin + ci) * ksz;
                if (pointwise) {
                    const T wv = wt[widx];
                    if (gsrc != nullptr) {
                        for (std::int64_t i = 0; i < plane_size; ++i) gsrc[i] += wv * gplane[i];
                    }
                    if (gw != nullptr) gw[widx] += lane_dot(gplane, src, plane_size, 1);
                    continue;
                }
                for (std::int64_t ky = 0; ky < g.kh; ++ky) {
                    for (std::int64_t kx = 0; kx < g.kw; ++kx) {
                        const T wv = wt[widx + ky * g.kw + kx];
                        std::int64_t lo, hi;
                        column_range(g, kx, lo, hi);
                        if (hi < lo) continue;
                        T wacc = T(0);
                        for (std::int64_t oy = 0; oy < g.ho; ++oy) {
                            const std::int64_t iy = oy * s - g.pad + ky;
                            if (iy < 0 || iy >= g.h) continue;
                            const std::int64_t base = iy * g.w - g.pad + kx;
                            const T* grow = gplane + oy * g.wo;
                            if (gsrc != nullptr) {
                                for (std::int64_t ox = lo; ox <= hi; ++ox) gsrc[base + ox * s] += wv * grow[ox];
                            }
                            if (gw != nullptr) wacc += lane_dot(grow + lo, src + base + lo * s, hi - lo + 1, s);
                        }
                        if (gw != nullptr) gw[widx + ky * g.kw + kx] += wacc;
                    }
                }
            }
        }
    }
}

template <typename T>
Tensor<T> conv_common(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride, int pad,
                      bool depthwise, const char* name) {
    const ConvGeom g = conv_geometry(x, weight, bias, stride, pad, depthwise, name);
    Tensor<T> out({g.n, g.cout, g.ho, g.wo});
    conv_forward(g, x.ptr(), weight.ptr(), bias.ptr(), out.ptr());
    check_finite(name, out);
    if (Tape* tape = recording_tape<T>({&x, &weight, &bias})) {
        tape->push<T>(name, out.impl(), [xi = x.impl(), wi = weight.impl(), bi = bias.impl(), g](const std::vector<T>& go) {
            T* gx = xi->requires_grad ? grad_buffer(*xi).data() : nullptr;
            T* gw = wi->requires_grad ? grad_buffer(*wi).data() : nullptr;
            T* gb = bi->requires_grad ? grad_buffer(*bi).data() : nullptr;
            conv_backward(g, xi->data.data(), wi->data.data(), go.data(), gx, gw, gb);
        });
    }
    return out;
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride, int pad) {
    return conv_common(x, weight, bias, stride, pad, false, "conv2d");
}

template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int pad) {
    return conv_common(x, weight, bias, 1, pad, true, "depthwise_conv2d");
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    require_rank4(x, "global_avg_pool", "input");
    const auto n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
    Tensor<T> out({n, c, 1, 1});
    for (std::int64_t p = 0; p < n * c; ++p) {
        double acc = 0.0;
        const T* src = x.ptr() + p * hw;
        for (std::int64_t i = 0; i < hw; ++i) acc += static_cast<double>(src[i]);
        out.ptr()[p] = static_cast<T>(acc / static_cast<double>(hw));
    }
    check_finite("global_avg_pool", out);
    if (Tape* tape = recording_tape<T>({&x})) {
        tape->push<T>("global_avg_pool", out.impl(), [xi = x.impl(), n, c, hw](const std::vector<T>& g) {
            auto& gx = grad_buffer(*xi);
            for (std::int64_t p = 0; p < n * c; ++p) {
                const T v = static_cast<T>(static_cast<double>(g[p]) / static_cast<double>(hw));
                T* dst = gx.data() + p * hw;
                for (std::int64_t i = 0; i < hw; ++i) dst[i] += v;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
    const int ax = normalize_axis(axis, x.rank(), "softmax");
    std::int64_t outer = 1;
    for (int d = 0; d < ax; ++d) outer *= x.shape()[d];
    std::int64_t inner = 1;
    for (int d = ax + 1; d < x.rank(); ++d) inner *= x.shape()[d];
    const std::int64_t len = x.shape()[ax];

    Tensor<T> out(x.shape());
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t i = 0; i < inner; ++i) {
            const T* src = x.ptr() + o * len * inner + i;
            T* dst = out.ptr() + o * len * inner + i;
            T mx = src[0];
            for (std::int64_t k = 1; k < len; ++k) mx = std::max(mx, src[k * inner]);
            T total = T(0);
            for (std::int64_t k = 0; k < len; ++k) {
                dst[k * inner] = std::exp(src[k * inner] - mx);
                total += dst[k * inner];
            }
            for (std::int64_t k = 0; k < len; ++k) dst[k * inner] /= total;
        }
    }
    check_finite("softmax", out);
    if (Tape* tape = recording_tape<T>({&x})) {
        std::weak_ptr<TensorImpl<T>> wout = out.impl();
        tape->push<T>("softmax", out.impl(), [xi = x.impl(), wout, outer, inner, len](const std::vector<T>& g) {
            auto oi = wout.lock();
            auto& gx = grad_buffer(*xi);
            for (std::int64_t o = 0; o < outer; ++o) {
                for (std::int64_t i = 0; i < inner; ++i) {
                    const std::int64_t base = o * len * inner + i;
                    T dot = T(0);
                    for (std::int64_t k = 0; k < len; ++k) dot += g[base + k * inner] * oi->data[base + k * inner];
                    for (std::int64_t k = 0; k < len; ++k) {
                        const std::int64_t j = base + k * inner;
                        gx[j] += oi->data[j] * (g[j] - dot);
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> channel_norm(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, double eps) {
    require_rank4(x, "channel_norm", "input");
    const auto n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
    if (weight.rank() != 1 || weight.shape()[0] != c) {
        throw ShapeError("channel_norm: weight must be [" + std::to_string(c) + "], got " + shape_str(weight.shape()));
    }
    if (bias.rank() != 1 || bias.shape()[0] != c) {
        throw ShapeError("channel_norm: bias must be [" + std::to_string(c) + "], got " + shape_str(bias.shape()));
    }
    Tensor<T> out(x.shape());
    std::vector<T> xhat(x.numel());
    std::vector<double> inv_std(static_cast<std::size_t>(n * hw));
    const double inv_c = 1.0 / static_cast<double>(c);
    std::vector<double> mu(static_cast<std::size_t>(hw));
    std::vector<double> var(static_cast<std::size_t>(hw));
    for (std::int64_t b = 0; b < n; ++b) {
        const T* src = x.ptr() + b * c * hw;
        std::fill(mu.begin(), mu.end(), 0.0);
        std::fill(var.begin(), var.end(), 0.0);
        for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t p = 0; p < hw; ++p) mu[p] += static_cast<double>(src[ch * hw + p]);
        for (auto& m : mu) m *= inv_c;
        for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t p = 0; p < hw; ++p) {
                const double d = static_cast<double>(src[ch * hw + p]) - mu[p];
                var[p] += d * d;
            }
        for (std::int64_t p = 0; p < hw; ++p) inv_std[b * hw + p] = 1.0 / std::sqrt(var[p] * inv_c + eps);
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const T wv = weight.ptr()[ch];
            const T bv = bias.ptr()[ch];
            for (std::int64_t p = 0; p < hw; ++p) {
                const std::int64_t i = (b * c + ch) * hw + p;
                const T xh = static_cast<T>((static_cast<double>(src[ch * hw + p]) - mu[p]) * inv_std[b * hw + p]);
                xhat[i] = xh;
                out.ptr()[i] = xh * wv + bv;
            }
        }
    }
    check_finite("channel_norm", out);
    if (Tape* tape = recording_tape<T>({&x, &weight, &bias})) {
        tape->push<T>("channel_norm", out.impl(),
                      [xi = x.impl(), wi = weight.impl(), bi = bias.impl(), xhat = std::move(xhat),
                       inv_std = std::move(inv_std), n, c, hw, inv_c](const std::vector<T>& g) {
                          if (wi->requires_grad) {
                              auto& gw = grad_buffer(*wi);
                              for (std::int64_t b = 0; b < n; ++b)
                                  for (std::int64_t ch = 0; ch < c; ++ch)
                                      for (std::int64_t p = 0; p < hw; ++p) {
                                          const std::int64_t i = (b * c + ch) * hw + p;
                                          gw[ch] += g[i] * xhat[i];
                                      }
                          }
                          if (bi->requires_grad) {
                              auto& gb = grad_buffer(*bi);
                              for (std::int64_t b = 0; b < n; ++b)
                                  for (std::int64_t ch = 0; ch < c; ++ch)
                                      for (std::int64_t p = 0; p < hw; ++p) gb[ch] += g[(b * c + ch) * hw + p];
                          }
                          if (!xi->requires_grad) return;
                          auto& gx = grad_buffer(*xi);
                          const T* wv = wi->data.data();
                          std::vector<double> m1(static_cast<std::size_t>(hw));
                          std::vector<double> m2(static_cast<std::size_t>(hw));
                          for (std::int64_t b = 0; b < n; ++b) {
                              std::fill(m1.begin(), m1.end(), 0.0);
                              std::fill(m2.begin(), m2.end(), 0.0);
                              for (std::int64_t ch = 0; ch < c; ++ch)
                                  for (std::int64_t p = 0; p < hw; ++p) {
                                      const std::int64_t i = (b * c + ch) * hw + p;
                                      const double dxh = static_cast<double>(g[i]) * static_cast<double>(wv[ch]);
                                      m1[p] += dxh;
                                      m2[p] += dxh * static_cast<double>(xhat[i]);
                                  }
                              for (std::int64_t ch = 0; ch < c; ++ch)
                                  for (std::int64_t p = 0; p < hw; ++p) {
                                      const std::int64_t i = (b * c + ch) * hw + p;
                                      const double dxh = static_cast<double>(g[i]) * static_cast<double>(wv[ch]);
                                      const double v = inv_std[b * hw + p] *
                                                       (dxh - m1[p] * inv_c - static_cast<double>(xhat[i]) * m2[p] * inv_c);
                                      gx[i] += static_cast<T>(v);
                                  }
                          }
                      });
    }
    return out;
}

#define PCSA_INSTANTIATE_OPS(T)                                                                              \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                              \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                              \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                              \
    template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                              \
    template Tensor<T> scale(const Tensor<T>&, T);                                                           \
    template Tensor<T> add_scalar(const Tensor<T>&, T);                                                      \
    template Tensor<T> sigmoid(const Tensor<T>&);                                                            \
    template Tensor<T> relu(const Tensor<T>&);                                                               \
    template Tensor<T> abs(const Tensor<T>&);                                                                \
    template Tensor<T> sum(const Tensor<T>&);                                                                \
    template Tensor<T> mean(const Tensor<T>&);                                                               \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                                     \
    template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                                           \
    template std::vector<Tensor<T>> split(const Tensor<T>&, const std::vector<std::int64_t>&, int);          \
    template std::vector<Tensor<T>> split_channels(const Tensor<T>&);                                        \
    template Tensor<T> transpose_hw(const Tensor<T>&);                                                       \
    template Tensor<T> pad2d(const Tensor<T>&, std::int64_t, std::int64_t);                                  \
    template Tensor<T> upsample_nearest2x(const Tensor<T>&);                                                 \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);               \
    template Tensor<T> depthwise_conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int);          \
    template Tensor<T> global_avg_pool(const Tensor<T>&);                                                    \
    template Tensor<T> softmax(const Tensor<T>&, int);                                                       \
    template Tensor<T> channel_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);

PCSA_INSTANTIATE_OPS(float)
PCSA_INSTANTIATE_OPS(double)

#undef PCSA_INSTANTIATE_OPS

}  // namespace pcsa
