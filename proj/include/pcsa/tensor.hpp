#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcsa/random.hpp"

namespace pcsa {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Thrown for any shape contract violation. The message names the offending
/// dimension.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A forward op produced NaN or Inf.
class NonFiniteError : public std::runtime_error {
public:
    NonFiniteError(std::string op, const std::string& what)
        : std::runtime_error(what), op_(std::move(op)) {}
    const std::string& op() const noexcept { return op_; }

private:
    std::string op_;
};

/// Misuse of the gradient tape (non-scalar loss, detached graph, double backward).
class AutogradError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class Tape;

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until a gradient is accumulated
    bool requires_grad = false;
    const Tape* producer = nullptr;  // null for leaves
    std::uint64_t generation = 0;
    const char* op = nullptr;
};

/// Dense row-major real array. Canonical image layout is N,C,H,W.
///
/// Tensor is a shared handle: copies alias the same storage, the way
/// parameters are shared between a parameter store and the graph. Use
/// clone() for a deep copy.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0));
    Tensor(Shape shape, std::vector<T> values);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
    static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
    static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }
    static Tensor uniform(Shape shape, double lo, double hi, Rng& rng);
    static Tensor scalar(T value) { return Tensor(Shape{1}, value); }

    bool defined() const noexcept { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    /// Extent of axis i; negative i counts from the back.
    std::int64_t dim(int i) const;
    std::size_t numel() const { return impl_->data.size(); }

    std::span<T> data() { return impl_->data; }
    std::span<const T> data() const { return impl_->data; }
    T* ptr() { return impl_->data.data(); }
    const T* ptr() const { return impl_->data.data(); }
    T item() const;

    T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w);
    T at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const;

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool on);
    bool is_leaf() const { return impl_->producer == nullptr; }

    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const T> grad() const;
    std::span<T> mutable_grad();
    /// Gradient as a standalone tensor (zeros when none was accumulated).
    Tensor grad_tensor() const;
    void zero_grad() { impl_->grad.clear(); }

    /// Deep copy of the values without graph membership or gradient.
    Tensor clone() const;
    /// Same values, different shape; never part of the graph.
    Tensor reshaped_copy(Shape shape) const;

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape());
        auto src = data();
        auto dst = out.data();
        for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<U>(src[i]);
        return out;
    }

    const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }
    static Tensor from_impl(std::shared_ptr<TensorImpl<T>> impl) {
        Tensor t;
        t.impl_ = std::move(impl);
        return t;
    }

private:
    std::shared_ptr<TensorImpl<T>> impl_;
};

template <typename T>
bool same_values(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) return false;
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] != y[i]) return false;
    }
    return true;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

extern template class Tensor<float>;
extern template class Tensor<double>;

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace pcsa
