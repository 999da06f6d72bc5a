#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <random>
#include <vector>

#include "slpt/diffcore/ops.hpp"

namespace slpt {

template <class T>
using ScalarGraphFn = std::function<Var(Graph<T>&, const std::vector<Var>&)>;

template <class T>
struct GradcheckResult {
    std::vector<T> max_error; // one entry per input
    T worst() const { return max_error.empty() ? T(0) : *std::max_element(max_error.begin(), max_error.end()); }
};

// Compares reverse-mode gradients of the scalar built by `fn` against central
// differences (f(x+h) − f(x−h)) / 2h, elementwise, with the error measured as
// |analytic − numeric| / max(1, |analytic|).
template <class T>
GradcheckResult<T> gradcheck(const ScalarGraphFn<T>& fn, const std::vector<Tensor<T>>& inputs, T h = T(1e-5))
{
    for (const auto& x : inputs) require(x.all_finite(), "gradcheck: non-finite input");

    auto evaluate = [&](const std::vector<Tensor<T>>& xs) {
        Graph<T> g;
        std::vector<Var> vars;
        for (const auto& x : xs) vars.push_back(g.constant(x));
        Var out = fn(g, vars);
        return g.value(out).item();
    };

    Graph<T> g;
    std::vector<Var> vars;
    for (const auto& x : inputs) vars.push_back(g.leaf(x, true));
    Var out = fn(g, vars);
    const T base = g.value(out).item();
    g.backward(out);

    if (evaluate(inputs) != base) throw ContractViolation("gradcheck: function is not deterministic");

    GradcheckResult<T> result;
    std::vector<Tensor<T>> probe = inputs;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Tensor<T>* analytic = g.grad_if(vars[k]);
        T worst = 0;
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            const T x0 = inputs[k][i];
            probe[k][i] = x0 + h;
            const T fp = evaluate(probe);
            probe[k][i] = x0 - h;
            const T fm = evaluate(probe);
            probe[k][i] = x0;
            const T numeric = (fp - fm) / (T(2) * h);
            const T a = analytic ? (*analytic)[i] : T(0);
            worst = std::max(worst, std::abs(a - numeric) / std::max(T(1), std::abs(a)));
        }
        result.max_error.push_back(worst);
    }
    return result;
}

template <class T>
using ParamGraphFn = std::function<Var(Graph<T>&, ParamStore<T>&)>;

// Same check for every parameter of `store`, perturbed in place. Returns the
// worst error per parameter name. The store's values are restored and its
// gradients zeroed afterwards.
template <class T>
std::map<std::string, T> gradcheck_params(const ParamGraphFn<T>& fn, ParamStore<T>& store, T h = T(1e-5))
{
    store.zero_grad();
    {
        Graph<T> g;
        g.backward(fn(g, store));
    }
    std::map<std::string, Tensor<T>> analytic;
    for (const auto& [name, e] : store.entries()) analytic.emplace(name, e.grad);
    store.zero_grad();
    auto evaluate = [&]() {
        Graph<T> g;
        return g.value(fn(g, store)).item();
    };
    std::map<std::string, T> out;
    for (auto& [name, e] : store.entries()) {
        T worst = 0;
        for (std::size_t i = 0; i < e.value.size(); ++i) {
            const T x0 = e.value[i];
            e.value[i] = x0 + h;
            const T fp = evaluate();
            e.value[i] = x0 - h;
            const T fm = evaluate();
            e.value[i] = x0;
            const T numeric = (fp - fm) / (T(2) * h);
            const T a = analytic.at(name)[i];
            worst = std::max(worst, std::abs(a - numeric) / std::max(T(1), std::abs(a)));
        }
        out[name] = worst;
    }
    return out;
}

template <class T>
T worst_of(const std::map<std::string, T>& errors)
{
    T w = 0;
    for (const auto& [_, e] : errors) w = std::max(w, e);
    return w;
}

// Σ r ⊙ out with fixed pseudo-random weights r; turns any tensor output into a
// scalar whose gradient exercises every output element.
template <class T>
Var random_projection(Graph<T>& g, Var out, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Tensor<T> r(g.value(out).shape());
    for (auto& x : r.vec()) x = static_cast<T>(dist(rng));
    return ops::sum(g, ops::mul(g, out, g.constant(std::move(r))));
}

} // namespace slpt
