#include "pcsa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pcsa {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] <= 0) {
            throw ShapeError("tensor extent at axis " + std::to_string(i) + " must be positive, got " +
                             std::to_string(shape[i]) + " in " + shape_str(shape));
        }
        n *= static_cast<std::size_t>(shape[i]);
    }
    return n;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : impl_(std::make_shared<TensorImpl<T>>()) {
    if (shape.empty()) throw ShapeError("tensor rank must be at least 1");
    const std::size_t n = shape_numel(shape);
    impl_->shape = std::move(shape);
    impl_->data.assign(n, fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<TensorImpl<T>>()) {
    if (shape.empty()) throw ShapeError("tensor rank must be at least 1");
    const std::size_t n = shape_numel(shape);
    if (values.size() != n) {
        throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                         shape_str(shape));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
}

template <typename T>
Tensor<T> Tensor<T>::uniform(Shape shape, double lo, double hi, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.impl_->data) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

template <typename T>
std::int64_t Tensor<T>::dim(int i) const {
    const int r = rank();
    const int idx = i < 0 ? r + i : i;
    if (idx < 0 || idx >= r) {
        throw ShapeError("axis " + std::to_string(i) + " out of range for rank " + std::to_string(r));
    }
    return impl_->shape[static_cast<std::size_t>(idx)];
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw ShapeError("item() requires a single-element tensor, got " + shape_str(shape()));
    return impl_->data[0];
}

template <typename T>
T& Tensor<T>::at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    const auto& s = impl_->shape;
    return impl_->data[static_cast<std::size_t>(((n * s[1] + c) * s[2] + h) * s[3] + w)];
}

template <typename T>
T Tensor<T>::at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    const auto& s = impl_->shape;
    return impl_->data[static_cast<std::size_t>(((n * s[1] + c) * s[2] + h) * s[3] + w)];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
    if (impl_->grad.empty()) throw AutogradError("tensor has no gradient");
    return impl_->grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
    return impl_->grad;
}

template <typename T>
Tensor<T> Tensor<T>::grad_tensor() const {
    if (impl_->grad.empty()) return Tensor(shape());
    return Tensor(shape(), impl_->grad);
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
    return Tensor(shape(), impl_->data);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped_copy(Shape shape) const {
    if (shape_numel(shape) != numel()) {
        throw ShapeError("cannot reshape " + shape_str(this->shape()) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), impl_->data);
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("max_abs_diff shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    double m = 0.0;
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        m = std::max(m, std::abs(static_cast<double>(x[i]) - static_cast<double>(y[i])));
    }
    return m;
}

template class Tensor<float>;
template class Tensor<double>;
template double max_abs_diff(const Tensor<float>&, const Tensor<float>&);
template double max_abs_diff(const Tensor<double>&, const Tensor<double>&);

}  // namespace pcsa
