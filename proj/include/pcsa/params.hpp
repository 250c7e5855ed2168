#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pcsa/tensor.hpp"

namespace pcsa {

/// Flat store of named parameters. Iteration follows insertion order, which
/// is fixed by the initializer for a given configuration.
template <typename T>
class ParamStore {
public:
    using Entry = std::pair<std::string, Tensor<T>>;

    Tensor<T>& add(const std::string& name, Tensor<T> t) {
        if (index_.count(name) != 0) throw std::invalid_argument("duplicate parameter name: " + name);
        index_.emplace(name, entries_.size());
        entries_.emplace_back(name, std::move(t));
        return entries_.back().second;
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    Tensor<T>& get(const std::string& name) { return entries_[lookup(name)].second; }
    const Tensor<T>& get(const std::string& name) const { return entries_[lookup(name)].second; }

    std::size_t size() const { return entries_.size(); }
    std::size_t total_elements() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.second.numel();
        return n;
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_) out.push_back(e.first);
        return out;
    }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    void set_requires_grad(bool on) {
        for (auto& e : entries_) e.second.set_requires_grad(on);
    }
    void zero_grad() {
        for (auto& e : entries_) e.second.zero_grad();
    }

    /// Deep copy with converted element type.
    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& e : entries_) out.add(e.first, e.second.template cast<U>());
        return out;
    }

    ParamStore clone() const {
        ParamStore out;
        for (const auto& e : entries_) out.add(e.first, e.second.clone());
        return out;
    }

private:
    std::size_t lookup(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
        return it->second;
    }

    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
};

}  // namespace pcsa
