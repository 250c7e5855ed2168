#include "pcsa/tape.hpp"

#include <atomic>
#include <cmath>

namespace pcsa {

namespace {

thread_local Tape* g_active = nullptr;
std::atomic<std::uint64_t> g_generation{1};

}  // namespace

namespace detail {

void set_active_tape(Tape* tape) { g_active = tape; }

template <typename T>
void check_finite(const char* op, const Tensor<T>& out) {
    for (T v : out.data()) {
        if (!std::isfinite(v)) {
            throw NonFiniteError(op, std::string("non-finite value produced by op '") + op + "' with output shape " +
                                         shape_str(out.shape()));
        }
    }
}

template void check_finite(const char*, const Tensor<float>&);
template void check_finite(const char*, const Tensor<double>&);

}  // namespace detail

Tape::Tape() : previous_(g_active), generation_(g_generation.fetch_add(1)) { g_active = this; }

Tape::~Tape() { g_active = previous_; }

Tape* Tape::active() { return g_active; }

void Tape::reset() {
    entries_.clear();
    visited_.clear();
    consumed_ = false;
    generation_ = g_generation.fetch_add(1);
}

std::vector<std::string> Tape::recorded_ops() const {
    std::vector<std::string> names;
    names.reserve(entries_.size());
    for (const auto& e : entries_) names.emplace_back(e.name);
    return names;
}

template <typename T>
void Tape::backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw AutogradError("backward requires a scalar loss, got shape " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    const auto& impl = *loss.impl();
    if (impl.producer != this || impl.generation != generation_) {
        throw AutogradError("backward called on a loss that was not recorded on this tape (detached graph)");
    }
    if (consumed_) {
        throw AutogradError("backward already ran on this tape; call reset() before recording again");
    }
    consumed_ = true;
    loss.impl()->grad.assign(1, T(1));
    visited_.clear();
    visited_.reserve(entries_.size());
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        visited_.emplace_back(it->name);
        it->run();
    }
}

template void Tape::backward(const Tensor<float>&);
template void Tape::backward(const Tensor<double>&);

template <typename T>
void backward(const Tensor<T>& loss) {
    Tape* tape = Tape::active();
    if (tape == nullptr) throw AutogradError("backward called with no active tape");
    tape->backward(loss);
}

template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

NoGradGuard::NoGradGuard() : saved_(g_active) { g_active = nullptr; }

NoGradGuard::~NoGradGuard() { g_active = saved_; }

}  // namespace pcsa
