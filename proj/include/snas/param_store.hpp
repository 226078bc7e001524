#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "snas/checkpoint.hpp"
#include "snas/tensor.hpp"

namespace snas {

/// Ordered registry of trainable tensors, keyed by dotted names, plus
/// non-trainable buffers (BN running statistics) that are checkpointed but
/// not iterated.
template <typename T>
class ParamStore {
public:
    Tensor<T> add(std::string name, Tensor<T> tensor) {
        check_unique(name);
        tensor.set_requires_grad(true);
        entries_.emplace_back(std::move(name), tensor);
        return tensor;
    }

    Tensor<T> add_buffer(std::string name, Tensor<T> tensor) {
        check_unique(name);
        buffers_.emplace_back(std::move(name), tensor);
        return tensor;
    }

    std::size_t num_buffers() const { return buffers_.size(); }

    std::size_t size() const { return entries_.size(); }
    const std::string& name(std::size_t i) const { return entries_[i].first; }
    Tensor<T>& operator[](std::size_t i) { return entries_[i].second; }
    const Tensor<T>& operator[](std::size_t i) const { return entries_[i].second; }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    std::size_t num_scalars() const {
        std::size_t n = 0;
        for (const auto& [_, t] : entries_) n += t.size();
        return n;
    }

    void zero_grad() {
        for (auto& [_, t] : entries_) t.zero_grad();
    }

    std::vector<NamedArray> to_arrays() const {
        std::vector<NamedArray> out;
        out.reserve(entries_.size());
        for (const auto& [n, t] : entries_) out.push_back(to_named_array(n, t));
        for (const auto& [n, t] : buffers_) out.push_back(to_named_array(n, t));
        return out;
    }

    /// Loads every entry by name; missing names are an error.
    void load(std::span<const NamedArray> arrays) {
        for (auto* list : {&entries_, &buffers_}) {
            for (auto& [n, t] : *list) {
                const NamedArray* a = find_array(arrays, n);
                if (!a) throw CheckpointError("checkpoint lacks parameter '" + n + "'");
                assign_from(t, *a);
            }
        }
    }

private:
    void check_unique(const std::string& name) const {
        for (const auto* list : {&entries_, &buffers_}) {
            for (const auto& [n, _] : *list) {
                if (n == name) throw std::logic_error("duplicate parameter name: " + name);
            }
        }
    }

    std::vector<std::pair<std::string, Tensor<T>>> entries_;
    std::vector<std::pair<std::string, Tensor<T>>> buffers_;
};

}  // namespace snas
