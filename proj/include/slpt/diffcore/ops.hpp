#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "slpt/diffcore/graph.hpp"

// Differentiable building blocks. Every function records one tape node whose
// backward closure is the hand-derived adjoint of its forward.
namespace slpt::ops {

namespace detail {

template <class T>
void check_same(const Graph<T>& g, Var a, Var b, const char* op)
{
    require(g.value(a).shape() == g.value(b).shape(), std::string(op) + ": shape mismatch " +
                                                          shape_str(g.value(a).shape()) + " vs " +
                                                          shape_str(g.value(b).shape()));
}

template <class T>
T sigmoid(T x)
{
    return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

template <class T>
T sign(T x)
{
    return static_cast<T>((x > 0) - (x < 0));
}

} // namespace detail

template <class T>
Var add(Graph<T>& g, Var a, Var b)
{
    detail::check_same(g, a, b, "add");
    Tensor<T> out = g.value(a);
    out += g.value(b);
    return g.record1("add", {a, b}, std::move(out), [a, b](Graph<T>& g, const auto& dy) {
        if (g.requires_grad(a)) g.grad(a) += *dy[0];
        if (g.requires_grad(b)) g.grad(b) += *dy[0];
    });
}

template <class T>
Var sub(Graph<T>& g, Var a, Var b)
{
    detail::check_same(g, a, b, "sub");
    Tensor<T> out = g.value(a);
    const auto& vb = g.value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= vb[i];
    return g.record1("sub", {a, b}, std::move(out), [a, b](Graph<T>& g, const auto& dy) {
        if (g.requires_grad(a)) g.grad(a) += *dy[0];
        if (g.requires_grad(b)) {
            auto& gb = g.grad(b);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= (*dy[0])[i];
        }
    });
}

template <class T>
Var mul(Graph<T>& g, Var a, Var b)
{
    detail::check_same(g, a, b, "mul");
    const auto& va = g.value(a);
    const auto& vb = g.value(b);
    Tensor<T> out(va.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
    return g.record1("mul", {a, b}, std::move(out), [a, b](Graph<T>& g, const auto& dy) {
        const auto& d = *dy[0];
        if (g.requires_grad(a)) {
            const auto& vb = g.value(b);
            auto& ga = g.grad(a);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += d[i] * vb[i];
        }
        if (g.requires_grad(b)) {
            const auto& va = g.value(a);
            auto& gb = g.grad(b);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += d[i] * va[i];
        }
    });
}

template <class T>
Var scale(Graph<T>& g, Var a, T s)
{
    Tensor<T> out = g.value(a);
    for (auto& x : out.vec()) x *= s;
    return g.record1("scale", {a}, std::move(out), [a, s](Graph<T>& g, const auto& dy) {
        auto& ga = g.grad(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * (*dy[0])[i];
    });
}

// Σ_k w_k · x_k over same-shaped inputs; used to assemble weighted objectives.
template <class T>
Var weighted_sum(Graph<T>& g, const std::vector<Var>& xs, const std::vector<T>& w)
{
    require(!xs.empty() && xs.size() == w.size(), "weighted_sum: need one weight per input");
    Tensor<T> out(g.value(xs[0]).shape());
    for (std::size_t k = 0; k < xs.size(); ++k) {
        detail::check_same(g, xs[0], xs[k], "weighted_sum");
        const auto& v = g.value(xs[k]);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += w[k] * v[i];
    }
    return g.record1("weighted_sum", xs, std::move(out), [xs, w](Graph<T>& g, const auto& dy) {
        for (std::size_t k = 0; k < xs.size(); ++k) {
            if (!g.requires_grad(xs[k])) continue;
            auto& gx = g.grad(xs[k]);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += w[k] * (*dy[0])[i];
        }
    });
}

template <class T>
Var sum(Graph<T>& g, Var a)
{
    const auto& va = g.value(a);
    T s = std::accumulate(va.vec().begin(), va.vec().end(), T(0));
    return g.record1("sum", {a}, Tensor<T>::scalar(s), [a](Graph<T>& g, const auto& dy) {
        const T d = (*dy[0])[0];
        for (auto& x : g.grad(a).vec()) x += d;
    });
}

// x·W + b with x {n, in}, W {in, out}, b {1, out} (b may be invalid for no bias).
template <class T>
Var linear(Graph<T>& g, Var x, Var w, Var b = {})
{
    const auto& vx = g.value(x);
    const auto& vw = g.value(w);
    require(vx.cols() == vw.rows(), "linear: input width " + std::to_string(vx.cols()) + " vs weight " +
                                        shape_str(vw.shape()));
    Tensor<T> out = Tensor<T>::matrix(vx.rows(), vw.cols());
    out.mat().noalias() = vx.mat() * vw.mat();
    std::vector<Var> inputs{x, w};
    if (b.valid()) {
        const auto& vb = g.value(b);
        require(vb.size() == vw.cols(), "linear: bias size mismatch");
        out.mat().rowwise() += vb.mat().row(0);
        inputs.push_back(b);
    }
    return g.record1("linear", inputs, std::move(out), [x, w, b](Graph<T>& g, const auto& dy) {
        const auto dm = dy[0]->mat();
        if (g.requires_grad(x)) g.grad(x).mat().noalias() += dm * g.value(w).mat().transpose();
        if (g.requires_grad(w)) g.grad(w).mat().noalias() += g.value(x).mat().transpose() * dm;
        if (b.valid() && g.requires_grad(b)) g.grad(b).mat().row(0) += dm.colwise().sum();
    });
}

template <class T>
Var silu(Graph<T>& g, Var a)
{
    const auto& va = g.value(a);
    Tensor<T> out(va.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * detail::sigmoid(va[i]);
    return g.record1("silu", {a}, std::move(out), [a](Graph<T>& g, const auto& dy) {
        const auto& va = g.value(a);
        auto& ga = g.grad(a);
        for (std::size_t i = 0; i < ga.size(); ++i) {
            const T s = detail::sigmoid(va[i]);
            ga[i] += (*dy[0])[i] * (s + va[i] * s * (T(1) - s));
        }
    });
}

template <class T>
Var sigmoid(Graph<T>& g, Var a)
{
    const auto& va = g.value(a);
    Tensor<T> out(va.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::sigmoid(va[i]);
    Tensor<T> saved = out;
    return g.record1("sigmoid", {a}, std::move(out), [a, saved](Graph<T>& g, const auto& dy) {
        auto& ga = g.grad(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*dy[0])[i] * saved[i] * (T(1) - saved[i]);
    });
}

template <class T>
Var exp(Graph<T>& g, Var a)
{
    const auto& va = g.value(a);
    Tensor<T> out(va.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(va[i]);
    Tensor<T> saved = out;
    return g.record1("exp", {a}, std::move(out), [a, saved](Graph<T>& g, const auto& dy) {
        auto& ga = g.grad(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*dy[0])[i] * saved[i];
    });
}

// Clamp into [lo, hi]; the gradient is zero wherever the bound is active.
template <class T>
Var clamp(Graph<T>& g, Var a, T lo, T hi)
{
    const auto& va = g.value(a);
    Tensor<T> out(va.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(va[i], lo, hi);
    return g.record1("clamp", {a}, std::move(out), [a, lo, hi](Graph<T>& g, const auto& dy) {
        const auto& va = g.value(a);
        auto& ga = g.grad(a);
        for (std::size_t i = 0; i < ga.size(); ++i)
            if (va[i] > lo && va[i] < hi) ga[i] += (*dy[0])[i];
    });
}

template <class T>
Var concat_cols(Graph<T>& g, const std::vector<Var>& parts)
{
    require(!parts.empty(), "concat_cols: no inputs");
    const std::size_t n = g.value(parts[0]).rows();
    std::vector<std::size_t> offsets{0};
    for (Var p : parts) {
        require(g.value(p).rows() == n, "concat_cols: row count mismatch");
        offsets.push_back(offsets.back() + g.value(p).cols());
    }
    Tensor<T> out = Tensor<T>::matrix(n, offsets.back());
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& v = g.value(parts[k]);
        const std::size_t c = v.cols();
        for (std::size_t r = 0; r < n; ++r) std::copy_n(v.row(r), c, out.row(r) + offsets[k]);
    }
    return g.record1("concat_cols", parts, std::move(out), [parts, offsets](Graph<T>& g, const auto& dy) {
        const auto& d = *dy[0];
        for (std::size_t k = 0; k < parts.size(); ++k) {
            if (!g.requires_grad(parts[k])) continue;
            auto& gp = g.grad(parts[k]);
            const std::size_t c = gp.cols();
            for (std::size_t r = 0; r < gp.rows(); ++r)
                for (std::size_t j = 0; j < c; ++j) gp(r, j) += d(r, offsets[k] + j);
        }
    });
}

template <class T>
Var slice_cols(Graph<T>& g, Var a, std::size_t start, std::size_t count)
{
    const auto& va = g.value(a);
    require(start + count <= va.cols(), "slice_cols: range exceeds width");
    Tensor<T> out = Tensor<T>::matrix(va.rows(), count);
    for (std::size_t r = 0; r < va.rows(); ++r) std::copy_n(va.row(r) + start, count, out.row(r));
    return g.record1("slice_cols", {a}, std::move(out), [a, start, count](Graph<T>& g, const auto& dy) {
        auto& ga = g.grad(a);
        const auto& d = *dy[0];
        for (std::size_t r = 0; r < ga.rows(); ++r)
            for (std::size_t j = 0; j < count; ++j) ga(r, start + j) += d(r, j);
    });
}

// out[i] = a[idx[i]]; backward scatter-adds in index order.
template <class T>
Var gather_rows(Graph<T>& g, Var a, std::vector<int> idx)
{
    Tensor<T> out = rows_gather(g.value(a), idx);
    return g.record1("gather_rows", {a}, std::move(out), [a, idx = std::move(idx)](Graph<T>& g, const auto& dy) {
        auto& ga = g.grad(a);
        const auto& d = *dy[0];
        const std::size_t c = ga.cols();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            T* dst = ga.row(static_cast<std::size_t>(idx[i]));
            const T* src = d.row(i);
            for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
        }
    });
}

// Max over consecutive blocks of `group` rows: {G*group, C} -> {G, C}.
// Ties resolve to the first row of the block.
template <class T>
Var group_max(Graph<T>& g, Var a, std::size_t group)
{
    const auto& va = g.value(a);
    require(group > 0 && va.rows() % group == 0, "group_max: rows not divisible by group size");
    const std::size_t groups = va.rows() / group;
    const std::size_t c = va.cols();
    Tensor<T> out = Tensor<T>::matrix(groups, c);
    std::vector<std::size_t> arg(groups * c);
    for (std::size_t q = 0; q < groups; ++q) {
        for (std::size_t j = 0; j < c; ++j) {
            std::size_t best = q * group;
            for (std::size_t r = q * group + 1; r < (q + 1) * group; ++r)
                if (va(r, j) > va(best, j)) best = r;
            out(q, j) = va(best, j);
            arg[q * c + j] = best;
        }
    }
    return g.record1("group_max", {a}, std::move(out), [a, arg = std::move(arg), c](Graph<T>& g, const auto& dy) {
        auto& ga = g.grad(a);
        const auto& d = *dy[0];
        for (std::size_t k = 0; k < arg.size(); ++k) ga(arg[k], k % c) += d[k];
    });
}

// {1, C} -> {n, C}
template <class T>
Var broadcast_rows(Graph<T>& g, Var a, std::size_t n)
{
    const auto& va = g.value(a);
    require(va.rows() == 1, "broadcast_rows: expects a single row");
    Tensor<T> out = Tensor<T>::matrix(n, va.cols());
    for (std::size_t r = 0; r < n; ++r) std::copy_n(va.row(0), va.cols(), out.row(r));
    return g.record1("broadcast_rows", {a}, std::move(out), [a](Graph<T>& g, const auto& dy) {
        g.grad(a).mat().row(0) += dy[0]->mat().colwise().sum();
    });
}

// {n, C} -> {1, C}
template <class T>
Var mean_rows(Graph<T>& g, Var a)
{
    const auto& va = g.value(a);
    const T inv = T(1) / static_cast<T>(va.rows());
    Tensor<T> out = Tensor<T>::matrix(1, va.cols());
    out.mat().row(0) = va.mat().colwise().sum() * inv;
    return g.record1("mean_rows", {a}, std::move(out), [a, inv](Graph<T>& g, const auto& dy) {
        g.grad(a).mat().rowwise() += dy[0]->mat().row(0) * inv;
    });
}

// Softmax over rows of `scores` {n, 1}, then the weighted sum of `feats` {n, C}.
template <class T>
Var attention_pool(Graph<T>& g, Var scores, Var feats)
{
    const auto& vs = g.value(scores);
    const auto& vf = g.value(feats);
    require(vs.cols() == 1 && vs.rows() == vf.rows(), "attention_pool: scores must be {n,1} matching feats");
    const std::size_t n = vf.rows();
    const T mx = *std::max_element(vs.vec().begin(), vs.vec().end());
    std::vector<T> w(n);
    T z = 0;
    for (std::size_t i = 0; i < n; ++i) z += (w[i] = std::exp(vs[i] - mx));
    for (auto& x : w) x /= z;
    Tensor<T> out = Tensor<T>::matrix(1, vf.cols());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < vf.cols(); ++j) out(0, j) += w[i] * vf(i, j);
    Tensor<T> pooled = out;
    return g.record1("attention_pool", {scores, feats}, std::move(out),
                     [scores, feats, w, pooled](Graph<T>& g, const auto& dy) {
                         const auto& d = *dy[0];
                         const auto& vf = g.value(feats);
                         const std::size_t c = vf.cols();
                         if (g.requires_grad(feats)) {
                             auto& gf = g.grad(feats);
                             for (std::size_t i = 0; i < w.size(); ++i)
                                 for (std::size_t j = 0; j < c; ++j) gf(i, j) += w[i] * d[j];
                         }
                         if (g.requires_grad(scores)) {
                             T base = 0;
                             for (std::size_t j = 0; j < c; ++j) base += d[j] * pooled[j];
                             auto& gs = g.grad(scores);
                             for (std::size_t i = 0; i < w.size(); ++i) {
                                 T dot = 0;
                                 for (std::size_t j = 0; j < c; ++j) dot += d[j] * vf(i, j);
                                 gs[i] += w[i] * (dot - base);
                             }
                         }
                     });
}

// Each row divided by its Euclidean norm. A zero row is a contract violation.
template <class T>
Var normalize_rows(Graph<T>& g, Var a)
{
    const auto& va = g.value(a);
    Tensor<T> out(va.shape());
    std::vector<T> norms(va.rows());
    for (std::size_t r = 0; r < va.rows(); ++r) {
        T n2 = 0;
        for (std::size_t j = 0; j < va.cols(); ++j) n2 += va(r, j) * va(r, j);
        require(n2 > T(0), "normalize_rows: zero-length row " + std::to_string(r));
        norms[r] = std::sqrt(n2);
        for (std::size_t j = 0; j < va.cols(); ++j) out(r, j) = va(r, j) / norms[r];
    }
    Tensor<T> unit = out;
    return g.record1("normalize_rows", {a}, std::move(out), [a, norms, unit](Graph<T>& g, const auto& dy) {
        auto& ga = g.grad(a);
        const auto& d = *dy[0];
        for (std::size_t r = 0; r < ga.rows(); ++r) {
            T dot = 0;
            for (std::size_t j = 0; j < ga.cols(); ++j) dot += d(r, j) * unit(r, j);
            for (std::size_t j = 0; j < ga.cols(); ++j) ga(r, j) += (d(r, j) - dot * unit(r, j)) / norms[r];
        }
    });
}

// z = μ + exp(½·logvar) ⊙ ε with ε held fixed.
template <class T>
Var reparameterize(Graph<T>& g, Var mu, Var logvar, Tensor<T> eps)
{
    detail::check_same(g, mu, logvar, "reparameterize");
    require(eps.shape() == g.value(mu).shape(), "reparameterize: noise shape mismatch");
    const auto& vm = g.value(mu);
    const auto& vl = g.value(logvar);
    Tensor<T> out(vm.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = vm[i] + std::exp(T(0.5) * vl[i]) * eps[i];
    return g.record1("reparameterize", {mu, logvar}, std::move(out),
                     [mu, logvar, eps = std::move(eps)](Graph<T>& g, const auto& dy) {
                         const auto& d = *dy[0];
                         if (g.requires_grad(mu)) g.grad(mu) += d;
                         if (g.requires_grad(logvar)) {
                             const auto& vl = g.value(logvar);
                             auto& gl = g.grad(logvar);
                             for (std::size_t i = 0; i < gl.size(); ++i)
                                 gl[i] += d[i] * T(0.5) * std::exp(T(0.5) * vl[i]) * eps[i];
                         }
                     });
}

// Σ |a − target| · mask / denom. `mask` may be empty (all ones). The
// subgradient of |·| at 0 is taken as 0.
template <class T>
Var masked_abs_sum(Graph<T>& g, Var a, const Tensor<T>& target, std::vector<unsigned char> mask, T denom)
{
    const auto& va = g.value(a);
    require(target.shape() == va.shape(), "masked_abs_sum: target shape " + shape_str(target.shape()) + " vs " +
                                              shape_str(va.shape()));
    require(mask.empty() || mask.size() == va.rows(), "masked_abs_sum: mask must have one entry per row");
    require(denom > T(0), "masked_abs_sum: denominator must be positive");
    const std::size_t c = va.cols();
    std::vector<T> sgn(va.size());
    T s = 0;
    for (std::size_t r = 0; r < va.rows(); ++r) {
        if (!mask.empty() && !mask[r]) continue;
        for (std::size_t j = 0; j < c; ++j) {
            const T diff = va(r, j) - target(r, j);
            s += std::abs(diff);
            sgn[r * c + j] = detail::sign(diff);
        }
    }
    return g.record1("masked_abs_sum", {a}, Tensor<T>::scalar(s / denom),
                     [a, sgn = std::move(sgn), denom](Graph<T>& g, const auto& dy) {
                         const T d = (*dy[0])[0] / denom;
                         auto& ga = g.grad(a);
                         for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += d * sgn[i];
                     });
}

// Same as masked_abs_sum but against another graph value (both sides receive gradient).
template <class T>
Var abs_diff_sum(Graph<T>& g, Var a, Var b, T denom)
{
    detail::check_same(g, a, b, "abs_diff_sum");
    require(denom > T(0), "abs_diff_sum: denominator must be positive");
    const auto& va = g.value(a);
    const auto& vb = g.value(b);
    std::vector<T> sgn(va.size());
    T s = 0;
    for (std::size_t i = 0; i < va.size(); ++i) {
        const T diff = va[i] - vb[i];
        s += std::abs(diff);
        sgn[i] = detail::sign(diff);
    }
    return g.record1("abs_diff_sum", {a, b}, Tensor<T>::scalar(s / denom),
                     [a, b, sgn = std::move(sgn), denom](Graph<T>& g, const auto& dy) {
                         const T d = (*dy[0])[0] / denom;
                         if (g.requires_grad(a)) {
                             auto& ga = g.grad(a);
                             for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += d * sgn[i];
                         }
                         if (g.requires_grad(b)) {
                             auto& gb = g.grad(b);
                             for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= d * sgn[i];
                         }
                     });
}

// (1/rows) Σ ½(μ² + e^{logvar} − 1 − logvar): KL(N(μ, σ²) ‖ N(0, 1)) summed over
// columns and averaged over rows.
template <class T>
Var kl_standard_normal(Graph<T>& g, Var mu, Var logvar)
{
    detail::check_same(g, mu, logvar, "kl_standard_normal");
    const auto& vm = g.value(mu);
    const auto& vl = g.value(logvar);
    const T inv = T(1) / static_cast<T>(vm.rows());
    T s = 0;
    for (std::size_t i = 0; i < vm.size(); ++i) s += T(0.5) * (vm[i] * vm[i] + std::exp(vl[i]) - T(1) - vl[i]);
    return g.record1("kl_standard_normal", {mu, logvar}, Tensor<T>::scalar(s * inv),
                     [mu, logvar, inv](Graph<T>& g, const auto& dy) {
                         const T d = (*dy[0])[0] * inv;
                         if (g.requires_grad(mu)) {
                             const auto& vm = g.value(mu);
                             auto& gm = g.grad(mu);
                             for (std::size_t i = 0; i < gm.size(); ++i) gm[i] += d * vm[i];
                         }
                         if (g.requires_grad(logvar)) {
                             const auto& vl = g.value(logvar);
                             auto& gl = g.grad(logvar);
                             for (std::size_t i = 0; i < gl.size(); ++i) gl[i] += d * T(0.5) * (std::exp(vl[i]) - T(1));
                         }
                     });
}

} // namespace slpt::ops
