#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>

#include "slpt/diffcore/tensor.hpp"

namespace slpt {

template <class T>
struct ParamEntry {
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> m;
    Tensor<T> v;
    std::int64_t step = 0;
    bool has_grad = false;
};

// Named trainable tensors with their gradients and Adam moments. Iteration
// order is the lexicographic name order, which fixes the checkpoint layout.
template <class T>
class ParamStore {
public:
    ParamEntry<T>& add(const std::string& name, Tensor<T> init)
    {
        require(!entries_.contains(name), "duplicate parameter name '" + name + "'");
        ParamEntry<T> e;
        e.grad = Tensor<T>(init.shape());
        e.m = Tensor<T>(init.shape());
        e.v = Tensor<T>(init.shape());
        e.value = std::move(init);
        return entries_.emplace(name, std::move(e)).first->second;
    }

    bool contains(const std::string& name) const { return entries_.contains(name); }

    ParamEntry<T>& at(const std::string& name)
    {
        auto it = entries_.find(name);
        require(it != entries_.end(), "unknown parameter '" + name + "'");
        return it->second;
    }
    const ParamEntry<T>& at(const std::string& name) const
    {
        auto it = entries_.find(name);
        require(it != entries_.end(), "unknown parameter '" + name + "'");
        return it->second;
    }

    Tensor<T>& value(const std::string& name) { return at(name).value; }
    const Tensor<T>& value(const std::string& name) const { return at(name).value; }

    std::map<std::string, ParamEntry<T>>& entries() { return entries_; }
    const std::map<std::string, ParamEntry<T>>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    std::size_t numel() const
    {
        std::size_t n = 0;
        for (const auto& [_, e] : entries_) n += e.value.size();
        return n;
    }

    void zero_grad()
    {
        for (auto& [_, e] : entries_) {
            e.grad.fill(T(0));
            e.has_grad = false;
        }
    }

    template <class U>
    ParamStore<U> cast() const
    {
        ParamStore<U> out;
        for (const auto& [name, e] : entries_) {
            auto& o = out.add(name, e.value.template cast<U>());
            o.m = e.m.template cast<U>();
            o.v = e.v.template cast<U>();
            o.step = e.step;
        }
        return out;
    }

private:
    std::map<std::string, ParamEntry<T>> entries_;
};

// Glorot-uniform weight of shape {in, out}.
template <class T>
Tensor<T> glorot_uniform(std::size_t in, std::size_t out, std::mt19937_64& rng, double gain = 1.0)
{
    const double limit = gain * std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Tensor<T> w = Tensor<T>::matrix(in, out);
    for (auto& x : w.vec()) x = static_cast<T>(dist(rng));
    return w;
}

} // namespace slpt
