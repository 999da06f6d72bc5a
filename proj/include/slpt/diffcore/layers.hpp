#pragma once

#include <random>
#include <string>
#include <vector>

#include "slpt/diffcore/ops.hpp"

namespace slpt {

// Shared per-row multilayer map: linear layers with SiLU between them and a
// linear output. Parameters live in a ParamStore under "<prefix>/l<i>/{w,b}".
struct Mlp {
    std::string prefix;
    std::vector<std::size_t> dims;

    std::size_t in() const { return dims.front(); }
    std::size_t out() const { return dims.back(); }
    std::size_t layers() const { return dims.size() - 1; }
    std::string weight(std::size_t i) const { return prefix + "/l" + std::to_string(i) + "/w"; }
    std::string bias(std::size_t i) const { return prefix + "/l" + std::to_string(i) + "/b"; }

    // Registers the parameters. With zero_last the output layer starts at zero.
    template <class T>
    void init(ParamStore<T>& store, std::mt19937_64& rng, bool zero_last = false) const
    {
        require(dims.size() >= 2, "Mlp needs at least input and output widths");
        for (std::size_t i = 0; i < layers(); ++i) {
            const bool last = i + 1 == layers();
            Tensor<T> w = (last && zero_last) ? Tensor<T>::matrix(dims[i], dims[i + 1])
                                              : glorot_uniform<T>(dims[i], dims[i + 1], rng);
            store.add(weight(i), std::move(w));
            store.add(bias(i), Tensor<T>::matrix(1, dims[i + 1]));
        }
    }

    template <class T>
    Var operator()(Graph<T>& g, ParamStore<T>& store, Var x) const
    {
        require(g.value(x).cols() == in(), prefix + ": input width " + std::to_string(g.value(x).cols()) +
                                               " != " + std::to_string(in()));
        for (std::size_t i = 0; i < layers(); ++i) {
            x = ops::linear(g, x, g.param(store, weight(i)), g.param(store, bias(i)));
            if (i + 1 < layers()) x = ops::silu(g, x);
        }
        return x;
    }
};

} // namespace slpt
