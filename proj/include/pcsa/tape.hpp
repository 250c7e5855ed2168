#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pcsa/tensor.hpp"

namespace pcsa {

/// Ordered record of differentiable ops executed while the tape is active.
///
/// Constructing a Tape makes it the active tape of the calling thread until
/// it is destroyed; tapes nest like scopes. Ops whose inputs require grad
/// append a backward closure; backward() replays them in reverse order.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Active tape of this thread, or nullptr.
    static Tape* active();

    template <typename T>
    void backward(const Tensor<T>& loss);

    /// Drops all recorded ops so the tape can be reused.
    void reset();

    std::size_t size() const { return entries_.size(); }
    std::uint64_t generation() const { return generation_; }
    std::vector<std::string> recorded_ops() const;
    /// Op names in the order the last backward() visited them.
    const std::vector<std::string>& visited_ops() const { return visited_; }

    template <typename T, typename Fn>
    void push(const char* name, const std::shared_ptr<TensorImpl<T>>& out, Fn fn) {
        out->requires_grad = true;
        out->producer = this;
        out->generation = generation_;
        out->op = name;
        std::weak_ptr<TensorImpl<T>> weak = out;
        // Output held weakly: consumers (or the caller) keep it alive, and an
        // output nobody holds can never receive a gradient.
        entries_.push_back(Entry{name, [weak, fn = std::move(fn)]() {
                                     auto o = weak.lock();
                                     if (o && !o->grad.empty()) fn(o->grad);
                                 }});
    }

private:
    struct Entry {
        const char* name;
        std::function<void()> run;
    };

    std::vector<Entry> entries_;
    std::vector<std::string> visited_;
    Tape* previous_ = nullptr;
    std::uint64_t generation_;
    bool consumed_ = false;
};

/// Runs backward on the active tape.
template <typename T>
void backward(const Tensor<T>& loss);

/// Suspends recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    Tape* saved_;
};

namespace detail {

void set_active_tape(Tape* tape);

template <typename T>
Tape* recording_tape(std::initializer_list<const Tensor<T>*> inputs) {
    Tape* tape = Tape::active();
    if (tape == nullptr) return nullptr;
    for (const auto* t : inputs) {
        if (t != nullptr && t->defined() && t->requires_grad()) return tape;
    }
    return nullptr;
}

/// Gradient buffer of an impl, allocated as zeros on first use.
template <typename T>
std::vector<T>& grad_buffer(TensorImpl<T>& impl) {
    if (impl.grad.empty()) impl.grad.assign(impl.data.size(), T(0));
    return impl.grad;
}

/// Throws NonFiniteError naming op if any element is NaN/Inf.
template <typename T>
void check_finite(const char* op, const Tensor<T>& out);

}  // namespace detail
}  // namespace pcsa
